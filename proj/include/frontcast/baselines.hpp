#pragma once

// Comparison models. LSTM flattens each front frame and runs a stacked
// recurrent core; ConvLSTM runs the same strided CNN encoder as the main
// model before the recurrent core and decodes with transposed convolutions;
// CLP is the ConvLSTM topology on all three channels, trained with the
// physics-informed loss. LSTM and ConvLSTM are front-only.

#include <string>
#include <vector>

#include <json.hpp>

#include "frontcast/checkpoint.hpp"
#include "frontcast/model.hpp"
#include "frontcast/nn.hpp"

namespace frontcast {

enum class BaselineKind { lstm, convlstm, clp };

inline std::string to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::lstm: return "lstm";
        case BaselineKind::convlstm: return "convlstm";
        case BaselineKind::clp: return "clp";
    }
    throw std::invalid_argument("unknown baseline kind");
}

inline BaselineKind baseline_kind_from_string(const std::string& s) {
    if (s == "lstm") return BaselineKind::lstm;
    if (s == "convlstm") return BaselineKind::convlstm;
    if (s == "clp") return BaselineKind::clp;
    throw std::invalid_argument("unknown baseline kind: " + s);
}

struct BaselineConfig {
    BaselineKind kind = BaselineKind::lstm;
    int hidden_size = 512;
    int num_layers = 2;
    double learning_rate = 1e-3;
    GridSpec grid;
    uint64_t seed = 0;

    int channels_in() const { return kind == BaselineKind::clp ? 3 : 1; }

    void validate() const {
        grid.validate();
        if (hidden_size < 1)
            throw invariant_error("BaselineConfig: hidden_size must be positive");
        if (num_layers < 1)
            throw invariant_error("BaselineConfig: num_layers must be positive");
    }
};

inline void to_json(nlohmann::json& j, const BaselineConfig& c) {
    j = {{"kind", to_string(c.kind)},
         {"hidden_size", c.hidden_size},
         {"num_layers", c.num_layers},
         {"learning_rate", c.learning_rate},
         {"grid", c.grid},
         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, BaselineConfig& c) {
    c.kind = baseline_kind_from_string(j.at("kind").get<std::string>());
    j.at("hidden_size").get_to(c.hidden_size);
    j.at("num_layers").get_to(c.num_layers);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("grid").get_to(c.grid);
    j.at("seed").get_to(c.seed);
}

class BaselineModel {
public:
    explicit BaselineModel(BaselineConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        const int c_in = cfg_.channels_in();
        const bool conv = cfg_.kind != BaselineKind::lstm;

        enc_h_.push_back(cfg_.grid.height);
        enc_w_.push_back(cfg_.grid.width);
        enc_ch_.push_back(c_in);
        if (conv) {
            // Same 2-layer encoder geometry as the main model.
            for (int l = 0; l < 2; ++l) {
                enc_h_.push_back((enc_h_.back() + 1) / 2);
                enc_w_.push_back((enc_w_.back() + 1) / 2);
                enc_ch_.push_back(kCnnChannelSchedule[static_cast<size_t>(l)]);
                const std::string name = "encoder." + std::to_string(l);
                enc_conv_.push_back(Conv2dLayer::make(params_, name + ".conv", enc_ch_[l],
                                                      enc_ch_[l + 1], 3, rng));
                enc_gn_.push_back(GroupNormLayer::make(params_, name + ".gn", enc_ch_[l + 1]));
            }
        }
        flat_size_ = static_cast<int64_t>(enc_ch_.back()) * enc_h_.back() * enc_w_.back();

        for (int l = 0; l < cfg_.num_layers; ++l)
            lstm_.push_back(LstmLayer::make(params_, "lstm." + std::to_string(l),
                                            l == 0 ? flat_size_ : cfg_.hidden_size,
                                            cfg_.hidden_size, rng));

        head_ = LinearLayer::make(params_, "head", cfg_.hidden_size, flat_size_, rng);

        if (conv) {
            for (int l = 2; l >= 1; --l) {
                const std::string name = "decoder." + std::to_string(2 - l);
                const int oph = enc_h_[static_cast<size_t>(l - 1)] -
                                (2 * enc_h_[static_cast<size_t>(l)] - 1);
                const int opw = enc_w_[static_cast<size_t>(l - 1)] -
                                (2 * enc_w_[static_cast<size_t>(l)] - 1);
                dec_conv_.push_back(ConvTranspose2dLayer::make(
                    params_, name + ".deconv", enc_ch_[static_cast<size_t>(l)],
                    enc_ch_[static_cast<size_t>(l - 1)], 3, oph, opw, rng));
                if (l > 1)
                    dec_gn_.push_back(GroupNormLayer::make(params_, name + ".gn",
                                                           enc_ch_[static_cast<size_t>(l - 1)]));
            }
        }
    }

    const BaselineConfig& config() const { return cfg_; }
    const GridSpec& grid() const { return cfg_.grid; }
    int channels() const { return cfg_.channels_in(); }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    int64_t parameter_count() const { return params_.total_scalars(); }

    std::vector<Var> bind(Tape& t, bool requires_grad) const {
        return params_.bind(t, requires_grad);
    }

    // input [T,C,H,W] -> prediction [C,H,W]
    Var predict(Tape& t, const std::vector<Var>& pv, Var input, ShapeTrace* trace = nullptr) const {
        const Tensor& in = t.val(input);
        if (in.ndim() != 4 || in.dim(1) != channels() || in.dim(2) != cfg_.grid.height ||
            in.dim(3) != cfg_.grid.width)
            throw std::invalid_argument("predict: input shape " + in.shape_str() +
                                        " does not match baseline config");
        const int64_t T = in.dim(0);
        if (trace)
            trace->stages.emplace_back("input", in.shape);

        Var x = input;
        for (size_t l = 0; l < enc_conv_.size(); ++l) {
            x = enc_conv_[l].apply(t, pv, x);
            x = enc_gn_[l].apply(t, pv, x);
            x = t.relu(x);
        }
        Var seq = t.reshape(x, {T, flat_size_});
        if (trace)
            trace->stages.emplace_back("flattened", t.val(seq).shape);

        // Stacked recurrence, timesteps strictly in order.
        std::vector<Var> h(lstm_.size()), c(lstm_.size());
        for (size_t l = 0; l < lstm_.size(); ++l) {
            h[l] = t.constant(Tensor({1, cfg_.hidden_size}));
            c[l] = t.constant(Tensor({1, cfg_.hidden_size}));
        }
        for (int64_t step = 0; step < T; ++step) {
            Var xt = t.slice_rows(seq, step, step + 1);
            for (size_t l = 0; l < lstm_.size(); ++l) {
                auto [h2, c2] = lstm_[l].step(t, pv, l == 0 ? xt : h[l - 1], h[l], c[l]);
                h[l] = h2;
                c[l] = c2;
            }
        }

        Var feat = head_.apply(t, pv, h.back());
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
        if (trace)
            trace->stages.emplace_back("output", t.val(img).shape);
        return img;
    }

    StateFrame forward(const std::vector<std::shared_ptr<const StateFrame>>& inputs) const {
        Tape t;
        const std::vector<Var> pv = bind(t, false);
        const Var x = t.constant(stack_window(inputs, channels(), cfg_.grid));
        const Var pred = predict(t, pv, x);
        return frame_from_tensor(t.val(pred), cfg_.grid, inputs.back()->day_index + 1);
    }

    void save(const std::filesystem::path& path) const {
        nlohmann::json meta = {{"kind", to_string(cfg_.kind)}, {"config", cfg_}};
        save_checkpoint(path, meta, params_);
    }

    static BaselineModel load(const CheckpointData& ck) {
        const std::string kind = ck.meta.at("kind").get<std::string>();
        if (kind == "ctp")
            throw parse_error(parse_error::kind::bad_value, "checkpoint is a ctp model");
        BaselineConfig cfg = ck.meta.at("config").get<BaselineConfig>();
        if (to_string(cfg.kind) != kind)
            throw parse_error(parse_error::kind::bad_value, "checkpoint kind tag mismatch");
        BaselineModel m(std::move(cfg));
        restore_params(m.params_, ck.blocks);
        return m;
    }

private:
    BaselineConfig cfg_;
    ParamStore params_;
    std::vector<int> enc_h_, enc_w_, enc_ch_;
    int64_t flat_size_ = 0;
    std::vector<Conv2dLayer> enc_conv_;
    std::vector<GroupNormLayer> enc_gn_;
    std::vector<LstmLayer> lstm_;
    LinearLayer head_;
    std::vector<ConvTranspose2dLayer> dec_conv_;
    std::vector<GroupNormLayer> dec_gn_;
};

// Spec-level convenience: one-shot forward of a freshly initialized model.
inline StateFrame baseline_forward(const BaselineConfig& cfg,
                                   const std::vector<std::shared_ptr<const StateFrame>>& inputs) {
    return BaselineModel(cfg).forward(inputs);
}

}  // namespace frontcast
