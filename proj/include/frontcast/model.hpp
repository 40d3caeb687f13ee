#pragma once

// The hybrid forecaster: strided CNN encoder over each input day, linear
// projection of the flattened features to d_model, multi-head self-attention
// encoder over the 7-day sequence, temporal mean pooling, projection back to
// feature space and a transposed-convolution decoder. The front channel is
// squashed through a sigmoid; velocity channels stay linear.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "frontcast/autodiff.hpp"
#include "frontcast/checkpoint.hpp"
#include "frontcast/grid.hpp"
#include "frontcast/nn.hpp"

namespace frontcast {

inline constexpr std::array<int, 4> kCnnChannelSchedule = {16, 32, 64, 128};

struct ModelConfig {
    int cnn_layers = 2;          // 0 disables the CNN (flatten raw frames)
    int transformer_layers = 2;  // 1..4
    int d_model = 512;
    int heads = 8;
    int d_ff = 1024;
    bool use_physics = true;     // false: single front channel in and out
    bool use_positional_encoding = true;
    GridSpec grid;
    uint64_t seed = 0;

    int channels_in() const { return use_physics ? 3 : 1; }

    void validate() const {
        grid.validate();
        if (cnn_layers < 0 || cnn_layers > 4)
            throw invariant_error("ModelConfig: cnn_layers must be in 0..4");
        if (transformer_layers < 1 || transformer_layers > 4)
            throw invariant_error("ModelConfig: transformer_layers must be in 1..4");
        if (d_model < 1 || heads < 1 || d_model % heads != 0)
            throw invariant_error("ModelConfig: d_model must be divisible by heads");
        if (d_ff < 1)
            throw invariant_error("ModelConfig: d_ff must be positive");
    }
};

inline void to_json(nlohmann::json& j, const GridSpec& g) {
    j = {{"height", g.height},
         {"width", g.width},
         {"dx_meters", g.dx_meters},
         {"dt_seconds", g.dt_seconds},
         {"nu", g.nu}};
}

inline void from_json(const nlohmann::json& j, GridSpec& g) {
    j.at("height").get_to(g.height);
    j.at("width").get_to(g.width);
    j.at("dx_meters").get_to(g.dx_meters);
    j.at("dt_seconds").get_to(g.dt_seconds);
    j.at("nu").get_to(g.nu);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"cnn_layers", c.cnn_layers},
         {"transformer_layers", c.transformer_layers},
         {"d_model", c.d_model},
         {"heads", c.heads},
         {"d_ff", c.d_ff},
         {"use_physics", c.use_physics},
         {"use_positional_encoding", c.use_positional_encoding},
         {"grid", c.grid},
         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("cnn_layers").get_to(c.cnn_layers);
    j.at("transformer_layers").get_to(c.transformer_layers);
    j.at("d_model").get_to(c.d_model);
    j.at("heads").get_to(c.heads);
    j.at("d_ff").get_to(c.d_ff);
    j.at("use_physics").get_to(c.use_physics);
    j.at("use_positional_encoding").get_to(c.use_positional_encoding);
    j.at("grid").get_to(c.grid);
    j.at("seed").get_to(c.seed);
}

// Packs window frames into a [T,C,H,W] tensor (C=3: front,u,v; C=1: front).
inline Tensor stack_window(const std::vector<std::shared_ptr<const StateFrame>>& frames,
                           int channels, const GridSpec& grid) {
    if (frames.empty())
        throw std::invalid_argument("stack_window: empty window");
    const int64_t T = static_cast<int64_t>(frames.size());
    const int64_t H = grid.height, W = grid.width;
    Tensor x({T, channels, H, W});
    for (int64_t t = 0; t < T; ++t) {
        const StateFrame& f = *frames[static_cast<size_t>(t)];
        if (f.spec() != grid)
            throw std::invalid_argument("stack_window: frame grid does not match model grid");
        auto put = [&](int c, const ScalarField& field) {
            std::copy(field.values().begin(), field.values().end(),
                      x.data.begin() + ((t * channels + c) * H * W));
        };
        put(0, f.front);
        if (channels == 3) {
            put(1, f.u);
            put(2, f.v);
        }
    }
    return x;
}

// Turns a predicted [C,H,W] tensor into a StateFrame (u,v zero for C=1).
inline StateFrame frame_from_tensor(const Tensor& pred, const GridSpec& grid, int64_t day_index) {
    const int64_t H = grid.height, W = grid.width;
    if (pred.ndim() != 3 || pred.dim(1) != H || pred.dim(2) != W)
        throw std::invalid_argument("frame_from_tensor: bad prediction shape " + pred.shape_str());
    auto channel = [&](int c) {
        std::vector<double> vals(pred.data.begin() + c * H * W, pred.data.begin() + (c + 1) * H * W);
        return ScalarField(grid, std::move(vals));
    };
    StateFrame f;
    f.front = channel(0);
    f.u = pred.dim(0) == 3 ? channel(1) : ScalarField(grid);
    f.v = pred.dim(0) == 3 ? channel(2) : ScalarField(grid);
    f.day_index = day_index;
    f.validate();
    return f;
}

// Named intermediate shapes recorded during a forward pass.
struct ShapeTrace {
    std::vector<std::pair<std::string, std::vector<int64_t>>> stages;
    const std::vector<int64_t>* find(const std::string& name) const {
        for (const auto& [n, s] : stages)
            if (n == name)
                return &s;
        return nullptr;
    }
};

// Full encoder block as used by the transformer stack; exposed standalone so
// tests can drive it with explicit weights.
inline Var attention_layer(Tape& t, Var x, const TransformerBlock& block,
                           const std::vector<Var>& pv) {
    return block.apply(t, pv, x);
}

class CtpModel {
public:
    explicit CtpModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        const int c_in = cfg_.channels_in();

        // Encoder spatial sizes; each strided conv maps s -> ceil(s/2).
        enc_h_.push_back(cfg_.grid.height);
        enc_w_.push_back(cfg_.grid.width);
        enc_ch_.push_back(c_in);
        for (int l = 0; l < cfg_.cnn_layers; ++l) {
            enc_h_.push_back((enc_h_.back() + 1) / 2);
            enc_w_.push_back((enc_w_.back() + 1) / 2);
            enc_ch_.push_back(kCnnChannelSchedule[static_cast<size_t>(l)]);
        }
        flat_size_ = static_cast<int64_t>(enc_ch_.back()) * enc_h_.back() * enc_w_.back();

        for (int l = 0; l < cfg_.cnn_layers; ++l) {
            const std::string name = "encoder." + std::to_string(l);
            enc_conv_.push_back(
                Conv2dLayer::make(params_, name + ".conv", enc_ch_[l], enc_ch_[l + 1], 3, rng));
            enc_gn_.push_back(GroupNormLayer::make(params_, name + ".gn", enc_ch_[l + 1]));
        }

        proj_in_ = LinearLayer::make(params_, "proj_in", flat_size_, cfg_.d_model, rng);

        for (int l = 0; l < cfg_.transformer_layers; ++l)
            blocks_.push_back(TransformerBlock::make(params_, "transformer." + std::to_string(l),
                                                     cfg_.d_model, cfg_.d_ff, cfg_.heads, rng));

        proj_out_ = LinearLayer::make(params_, "proj_out", cfg_.d_model, flat_size_, rng);

        // Decoder mirrors the encoder; output padding per layer hits the
        // recorded encoder sizes exactly ((s-1)*2 - 2 + 3 = 2s - 1, +1 when
        // the target size is even).
        for (int l = cfg_.cnn_layers; l >= 1; --l) {
            const std::string name = "decoder." + std::to_string(cfg_.cnn_layers - l);
            const int oph = enc_h_[static_cast<size_t>(l - 1)] - (2 * enc_h_[static_cast<size_t>(l)] - 1);
            const int opw = enc_w_[static_cast<size_t>(l - 1)] - (2 * enc_w_[static_cast<size_t>(l)] - 1);
            dec_conv_.push_back(ConvTranspose2dLayer::make(params_, name + ".deconv",
                                                           enc_ch_[static_cast<size_t>(l)],
                                                           enc_ch_[static_cast<size_t>(l - 1)], 3,
                                                           oph, opw, rng));
            if (l > 1)
                dec_gn_.push_back(GroupNormLayer::make(params_, name + ".gn",
                                                       enc_ch_[static_cast<size_t>(l - 1)]));
        }
    }

    const ModelConfig& config() const { return cfg_; }
    const GridSpec& grid() const { return cfg_.grid; }
    int channels() const { return cfg_.channels_in(); }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    int64_t parameter_count() const { return params_.total_scalars(); }
    int64_t flattened_size() const { return flat_size_; }

    std::vector<Var> bind(Tape& t, bool requires_grad) const {
        return params_.bind(t, requires_grad);
    }

    // input [T,C,H,W] -> prediction [C,H,W]; records stage shapes if asked.
    Var predict(Tape& t, const std::vector<Var>& pv, Var input, ShapeTrace* trace = nullptr) const {
        const Tensor& in = t.val(input);
        if (in.ndim() != 4 || in.dim(1) != channels() || in.dim(2) != cfg_.grid.height ||
            in.dim(3) != cfg_.grid.width)
            throw std::invalid_argument("predict: input shape " + in.shape_str() +
                                        " does not match model config");
        const int64_t T = in.dim(0);
        auto record = [&](const char* name, Var v) {
            if (trace)
                trace->stages.emplace_back(name, t.val(v).shape);
        };
        record("input", input);

        Var x = input;
        for (size_t l = 0; l < enc_conv_.size(); ++l) {
            x = enc_conv_[l].apply(t, pv, x);
            x = enc_gn_[l].apply(t, pv, x);
            x = t.relu(x);
        }
        record("encoded", x);

        Var seq = t.reshape(x, {T, flat_size_});
        record("flattened", seq);
        seq = proj_in_.apply(t, pv, seq);
        if (cfg_.use_positional_encoding)
            seq = t.add(seq, t.constant(positional_encoding(T, cfg_.d_model)));
        record("latent", seq);

        for (const auto& block : blocks_)
            seq = block.apply(t, pv, seq);

        Var pooled = t.mean_rows(seq);
        record("pooled", pooled);
        Var feat = proj_out_.apply(t, pv, pooled);
        record("projected", feat);

        Var img = t.reshape(feat, {1, enc_ch_.back(), enc_h_.back(), enc_w_.back()});
        for (size_t l = 0; l < dec_conv_.size(); ++l) {
            img = dec_conv_[l].apply(t, pv, img);
            if (l + 1 < dec_conv_.size()) {
                img = dec_gn_[l].apply(t, pv, img);
                img = t.relu(img);
            }
        }
        img = t.reshape(img, {static_cast<int64_t>(channels()), cfg_.grid.height, cfg_.grid.width});
        img = t.sigmoid_channel(img, 0);
        record("output", img);
        return img;
    }

    // Non-differentiating forward over a window of frames.
    StateFrame forward(const std::vector<std::shared_ptr<const StateFrame>>& inputs,
                       ShapeTrace* trace = nullptr) const {
        Tape t;
        const std::vector<Var> pv = bind(t, false);
        const Var x = t.constant(stack_window(inputs, channels(), cfg_.grid));
        const Var pred = predict(t, pv, x, trace);
        return frame_from_tensor(t.val(pred), cfg_.grid, inputs.back()->day_index + 1);
    }

    // Encoder output for a [T,C,H,W] stack (identity when cnn_layers == 0).
    Tensor encode_cnn(const Tensor& stack) const {
        Tape t;
        const std::vector<Var> pv = bind(t, false);
        Var x = t.constant(stack);
        for (size_t l = 0; l < enc_conv_.size(); ++l) {
            x = enc_conv_[l].apply(t, pv, x);
            x = enc_gn_[l].apply(t, pv, x);
            x = t.relu(x);
        }
        return t.val(x);
    }

    const std::vector<TransformerBlock>& transformer_blocks() const { return blocks_; }

    void save(const std::filesystem::path& path) const {
        nlohmann::json meta = {{"kind", "ctp"}, {"config", cfg_}};
        save_checkpoint(path, meta, params_);
    }

    static CtpModel load(const CheckpointData& ck) {
        if (ck.meta.at("kind").get<std::string>() != "ctp")
            throw parse_error(parse_error::kind::bad_value, "checkpoint is not a ctp model");
        CtpModel m(ck.meta.at("config").get<ModelConfig>());
        restore_params(m.params_, ck.blocks);
        return m;
    }

private:
    ModelConfig cfg_;
    ParamStore params_;
    std::vector<int> enc_h_, enc_w_, enc_ch_;
    int64_t flat_size_ = 0;
    std::vector<Conv2dLayer> enc_conv_;
    std::vector<GroupNormLayer> enc_gn_;
    LinearLayer proj_in_, proj_out_;
    std::vector<TransformerBlock> blocks_;
    std::vector<ConvTranspose2dLayer> dec_conv_;
    std::vector<GroupNormLayer> dec_gn_;
};

}  // namespace frontcast
