#pragma once

// Raster data model for gridded ocean state: grid geometry, scalar fields,
// daily state frames, the on-disk raster format, windowing into training
// samples and chronological train/test splitting.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace frontcast {

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct parse_error : std::runtime_error {
    enum class kind { bad_magic, truncated, dimension_mismatch, bad_value };
    kind which;
    parse_error(kind k, const std::string& msg) : std::runtime_error(msg), which(k) {}
};

struct invariant_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Physical geometry and units of a raster. Row index runs northward,
// column index runs eastward; cells are square with spacing dx_meters.
struct GridSpec {
    int height = 0;
    int width = 0;
    double dx_meters = 9000.0;
    double dt_seconds = 86400.0;
    double nu = 1e-6;  // kinematic viscosity, m^2/s

    void validate() const {
        if (height < 4 || width < 4)
            throw invariant_error("GridSpec: height and width must be >= 4");
        if (!(dx_meters > 0.0) || !(dt_seconds > 0.0))
            throw invariant_error("GridSpec: dx_meters and dt_seconds must be positive");
        if (!(nu >= 0.0))
            throw invariant_error("GridSpec: nu must be non-negative");
    }

    bool operator==(const GridSpec& o) const {
        return height == o.height && width == o.width && dx_meters == o.dx_meters &&
               dt_seconds == o.dt_seconds && nu == o.nu;
    }
    bool operator!=(const GridSpec& o) const { return !(*this == o); }
};

// Dense H x W field of doubles, row-major. All public operations keep every
// value finite.
class ScalarField {
public:
    ScalarField() = default;

    explicit ScalarField(GridSpec spec, double fill = 0.0)
        : spec_(spec), values_(static_cast<size_t>(spec.height) * spec.width, fill) {
        spec_.validate();
    }

    ScalarField(GridSpec spec, std::vector<double> values)
        : spec_(spec), values_(std::move(values)) {
        spec_.validate();
        if (values_.size() != static_cast<size_t>(spec_.height) * spec_.width)
            throw invariant_error("ScalarField: value count does not match grid");
        validate_finite();
    }

    int height() const { return spec_.height; }
    int width() const { return spec_.width; }
    const GridSpec& spec() const { return spec_; }

    double operator()(int i, int j) const { return values_[static_cast<size_t>(i) * spec_.width + j]; }
    double& operator()(int i, int j) { return values_[static_cast<size_t>(i) * spec_.width + j]; }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    void validate_finite() const {
        for (double v : values_)
            if (!std::isfinite(v))
                throw invariant_error("ScalarField: non-finite value");
    }

    bool operator==(const ScalarField& o) const { return spec_ == o.spec_ && values_ == o.values_; }

private:
    GridSpec spec_;
    std::vector<double> values_;
};

// One day of state: frontal-zone field (label 0/1 or predicted probability),
// eastward velocity u and northward velocity v, all on one grid.
struct StateFrame {
    ScalarField front;
    ScalarField u;
    ScalarField v;
    int64_t day_index = 0;

    const GridSpec& spec() const { return front.spec(); }

    void validate() const {
        if (front.spec() != u.spec() || front.spec() != v.spec())
            throw invariant_error("StateFrame: fields do not share one GridSpec");
        front.validate_finite();
        u.validate_finite();
        v.validate_finite();
        for (double p : front.values())
            if (p < 0.0 || p > 1.0)
                throw invariant_error("StateFrame: front value outside [0,1]");
    }

    bool operator==(const StateFrame& o) const {
        return day_index == o.day_index && front == o.front && u == o.u && v == o.v;
    }
};

// 7 consecutive input frames plus the next-day target frame.
struct SampleWindow {
    std::vector<std::shared_ptr<const StateFrame>> inputs;
    std::shared_ptr<const StateFrame> target;

    void validate() const {
        if (inputs.empty() || !target)
            throw invariant_error("SampleWindow: empty window");
        for (size_t k = 1; k < inputs.size(); ++k)
            if (inputs[k]->day_index != inputs[k - 1]->day_index + 1)
                throw invariant_error("SampleWindow: input day indices not consecutive");
        if (target->day_index != inputs.back()->day_index + 1)
            throw invariant_error("SampleWindow: target is not the day after the last input");
    }
};

struct Dataset {
    std::vector<SampleWindow> samples;
    GridSpec spec;

    size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

namespace detail {

inline void append_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}

template <typename T>
inline void put_le(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> b{};
    std::memcpy(b.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(b.begin(), b.end());
    append_bytes(out, b.data(), sizeof(T));
}

template <typename T>
inline T get_le(const std::string& buf, size_t& off, const char* what) {
    if (off + sizeof(T) > buf.size())
        throw parse_error(parse_error::kind::truncated,
                          std::string("raster truncated while reading ") + what);
    std::array<unsigned char, sizeof(T)> b{};
    std::memcpy(b.data(), buf.data() + off, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(b.begin(), b.end());
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace detail

inline constexpr char kRasterMagic[7] = {'F', 'G', 'R', 'I', 'D', '1', '\n'};
inline constexpr uint32_t kRasterChannels = 3;

// Writes the binary raster format: magic "FGRID1\n", uint32 height, uint32
// width, uint32 channels(=3), int64 day_index, float64 dx/dt/nu, then
// channels*H*W float32 values channel-major (front, u, v), row-major within
// a channel. Little-endian throughout.
inline void save_raster(const StateFrame& frame, const std::filesystem::path& destination) {
    frame.validate();
    std::string buf;
    buf.reserve(64 + static_cast<size_t>(3) * frame.spec().height * frame.spec().width * 4);
    detail::append_bytes(buf, kRasterMagic, sizeof(kRasterMagic));
    detail::put_le<uint32_t>(buf, static_cast<uint32_t>(frame.spec().height));
    detail::put_le<uint32_t>(buf, static_cast<uint32_t>(frame.spec().width));
    detail::put_le<uint32_t>(buf, kRasterChannels);
    detail::put_le<int64_t>(buf, frame.day_index);
    detail::put_le<double>(buf, frame.spec().dx_meters);
    detail::put_le<double>(buf, frame.spec().dt_seconds);
    detail::put_le<double>(buf, frame.spec().nu);
    for (const ScalarField* f : {&frame.front, &frame.u, &frame.v})
        for (double v : f->values())
            detail::put_le<float>(buf, static_cast<float>(v));

    std::ofstream out(destination, std::ios::binary | std::ios::trunc);
    if (!out)
        throw io_error("cannot open for writing: " + destination.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out)
        throw io_error("write failed: " + destination.string());
}

inline StateFrame load_raster(const std::filesystem::path& source) {
    std::ifstream in(source, std::ios::binary);
    if (!in)
        throw io_error("cannot open for reading: " + source.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kRasterMagic) ||
        std::memcmp(buf.data(), kRasterMagic, sizeof(kRasterMagic)) != 0)
        throw parse_error(parse_error::kind::bad_magic, "raster magic mismatch: " + source.string());
    size_t off = sizeof(kRasterMagic);

    const auto height = detail::get_le<uint32_t>(buf, off, "height");
    const auto width = detail::get_le<uint32_t>(buf, off, "width");
    const auto channels = detail::get_le<uint32_t>(buf, off, "channels");
    const auto day_index = detail::get_le<int64_t>(buf, off, "day_index");
    const auto dx = detail::get_le<double>(buf, off, "dx_meters");
    const auto dt = detail::get_le<double>(buf, off, "dt_seconds");
    const auto nu = detail::get_le<double>(buf, off, "nu");

    if (channels != kRasterChannels)
        throw parse_error(parse_error::kind::dimension_mismatch,
                          "raster declares " + std::to_string(channels) + " channels, expected 3");
    if (height < 4 || width < 4 || height > 1u << 20 || width > 1u << 20)
        throw parse_error(parse_error::kind::dimension_mismatch,
                          "raster dimensions out of range: " + std::to_string(height) + "x" +
                              std::to_string(width));

    GridSpec spec{static_cast<int>(height), static_cast<int>(width), dx, dt, nu};
    try {
        spec.validate();
    } catch (const invariant_error& e) {
        throw parse_error(parse_error::kind::bad_value, e.what());
    }

    const size_t cells = static_cast<size_t>(height) * width;
    const size_t expect = off + kRasterChannels * cells * sizeof(float);
    if (buf.size() < expect)
        throw parse_error(parse_error::kind::truncated, "raster payload truncated: " + source.string());

    auto read_field = [&]() {
        std::vector<double> vals(cells);
        for (size_t k = 0; k < cells; ++k) {
            float f = detail::get_le<float>(buf, off, "payload");
            if (!std::isfinite(f))
                throw parse_error(parse_error::kind::bad_value, "non-finite raster value");
            vals[k] = static_cast<double>(f);
        }
        return ScalarField(spec, std::move(vals));
    };

    StateFrame frame;
    frame.front = read_field();
    frame.u = read_field();
    frame.v = read_field();
    frame.day_index = day_index;
    try {
        frame.validate();
    } catch (const invariant_error& e) {
        throw parse_error(parse_error::kind::bad_value, e.what());
    }
    return frame;
}

inline std::string frame_filename(int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%06lld.bin", static_cast<long long>(index));
    return buf;
}

// Writes a sequence as a directory of frame_%06d.bin rasters, numbered from 0.
inline void save_sequence(const std::vector<StateFrame>& frames, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (size_t k = 0; k < frames.size(); ++k)
        save_raster(frames[k], dir / frame_filename(static_cast<int64_t>(k)));
}

inline std::vector<StateFrame> load_sequence(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw io_error("not a sequence directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("frame_", 0) == 0 && name.size() > 4 &&
            name.compare(name.size() - 4, 4, ".bin") == 0)
            files.push_back(e.path());
    }
    if (files.empty())
        throw io_error("no frame_*.bin files in " + dir.string());
    std::sort(files.begin(), files.end());
    std::vector<StateFrame> frames;
    frames.reserve(files.size());
    for (const auto& f : files)
        frames.push_back(load_raster(f));
    std::sort(frames.begin(), frames.end(),
              [](const StateFrame& a, const StateFrame& b) { return a.day_index < b.day_index; });
    return frames;
}

// Slices an ordered frame sequence into sliding windows of `context` inputs
// plus the next-day target. For horizon h, only windows whose h-step-ahead
// truth exists are kept, so the count is N - context - horizon + 1.
inline Dataset window_dataset(const std::vector<StateFrame>& frames, int context = 7,
                              int horizon = 1) {
    if (context < 1 || horizon < 1)
        throw std::invalid_argument("window_dataset: context and horizon must be >= 1");
    const int64_t n = static_cast<int64_t>(frames.size());
    if (n < context + horizon)
        throw std::invalid_argument("window_dataset: need at least " +
                                    std::to_string(context + horizon) + " frames, got " +
                                    std::to_string(n));
    for (int64_t k = 1; k < n; ++k)
        if (frames[k].day_index != frames[k - 1].day_index + 1)
            throw std::invalid_argument("window_dataset: day indices not consecutive at position " +
                                        std::to_string(k));
    for (int64_t k = 1; k < n; ++k)
        if (frames[k].spec() != frames[0].spec())
            throw std::invalid_argument("window_dataset: frames do not share one GridSpec");

    std::vector<std::shared_ptr<const StateFrame>> shared;
    shared.reserve(frames.size());
    for (const auto& f : frames)
        shared.push_back(std::make_shared<const StateFrame>(f));

    Dataset ds;
    ds.spec = frames[0].spec();
    const int64_t count = n - context - horizon + 1;
    ds.samples.reserve(static_cast<size_t>(count));
    for (int64_t s = 0; s < count; ++s) {
        SampleWindow w;
        w.inputs.assign(shared.begin() + s, shared.begin() + s + context);
        w.target = shared[static_cast<size_t>(s + context)];
        w.validate();
        ds.samples.push_back(std::move(w));
    }
    return ds;
}

// Chronological split: the first floor(ratio*N) samples become the training
// set, the remainder the test set. Windows overlap in time, so a shuffled
// split would leak test targets into training inputs.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double ratio) {
    if (ds.empty())
        throw std::invalid_argument("split_train_test: empty dataset");
    if (!(ratio > 0.0 && ratio < 1.0))
        throw std::invalid_argument("split_train_test: ratio must be in (0,1)");
    const size_t n_train = static_cast<size_t>(std::floor(ratio * static_cast<double>(ds.size())));
    Dataset train{{}, ds.spec}, test{{}, ds.spec};
    train.samples.assign(ds.samples.begin(), ds.samples.begin() + n_train);
    test.samples.assign(ds.samples.begin() + n_train, ds.samples.end());
    return {std::move(train), std::move(test)};
}

}  // namespace frontcast
