#ifndef TACT_MODEL_HPP
#define TACT_MODEL_HPP

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "tact/adam.hpp"
#include "tact/dataset.hpp"
#include "tact/layers.hpp"
#include "tact/nn.hpp"

// Sequence classifier: per-modality feature extractors, fusion with a learned
// projection to d_model, a transformer encoder (or a direct mean-pool head as
// the naive baseline), and a softmax over the four layer counts.

namespace tact::model {

enum class FlowBackbone { NaiveCNN, CNNStar, ResidualCNN };
enum class ClassifierKind { DirectHead, Transformer };

std::string to_string(FlowBackbone b);
std::string to_string(ClassifierKind c);
FlowBackbone backbone_from_string(const std::string& s);
ClassifierKind classifier_from_string(const std::string& s);

struct ModelConfig {
    data::InputMask input_mask;
    FlowBackbone flow_backbone = FlowBackbone::CNNStar;
    ClassifierKind classifier = ClassifierKind::Transformer;
    std::size_t d_model = 160;
    std::size_t nhead = 8;
    std::size_t num_layers = 3;
    std::size_t d_ff = 2048;
    std::size_t flow_feature_dim = 60;  // per sensor; 60+60+24+16 = d_model
    std::size_t wrench_feature_dim = 24;
    std::size_t joint_feature_dim = 16;
    std::size_t mlp_hidden = 32;
    std::size_t head_hidden = 64;
    std::size_t num_classes = 4;
    std::size_t sequence_length = 160;
    std::size_t pooled_h = 96, pooled_w = 128;
    std::array<std::size_t, 4> cnn_channels{16, 32, 64, 128};
    double dropout_p = 0.3;  // CNN* only
    std::uint64_t init_seed = 0;

    std::size_t flow_channels() const { return input_mask.flow_angles ? 2u : 1u; }
    std::size_t concat_dim() const {
        std::size_t d = 0;
        if (input_mask.s1_flow) d += flow_feature_dim;
        if (input_mask.s2_flow) d += flow_feature_dim;
        if (input_mask.wrench) d += wrench_feature_dim;
        if (input_mask.joints) d += joint_feature_dim;
        return d;
    }
    void validate() const {
        if (nhead == 0 || d_model % nhead != 0)
            throw shape_error("model config: d_model " + std::to_string(d_model) +
                              " not divisible by nhead " + std::to_string(nhead));
        if (!input_mask.any()) throw format_error("model config: input mask enables nothing");
        if (num_classes < 2) throw format_error("model config: need at least 2 classes");
    }

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// ------------------------------------------------------------- extractors

// batched input [N, C, H, W] -> features [N, flow_feature_dim]
template <Real T>
struct FlowExtractor {
    FlowBackbone kind = FlowBackbone::CNNStar;
    double dropout_p = 0.3;

    // plain / star path
    std::array<nn::Conv2d<T>, 4> conv;
    std::array<nn::BatchNorm2d<T>, 4> bn;
    // residual path: second conv per stage plus projection skip
    std::array<nn::Conv2d<T>, 4> conv_b;
    std::array<nn::BatchNorm2d<T>, 4> bn_b;
    std::array<nn::Conv2d<T>, 4> conv_skip;
    std::array<nn::BatchNorm2d<T>, 4> bn_skip;

    nn::DropoutLayer<T> dropout;
    nn::Linear<T> fc;

    // caches for backward
    std::array<Tensor<T>, 4> pre_relu;        // stage outputs before relu
    std::array<Tensor<T>, 4> res_mid_pre;     // residual: pre-relu of first conv
    std::vector<std::size_t> gap_in_shape;
    Tensor<T> gap_out;

    FlowExtractor() = default;
    FlowExtractor(const ModelConfig& cfg, std::mt19937_64& rng) {
        kind = cfg.flow_backbone;
        dropout_p = cfg.dropout_p;
        dropout.p = kind == FlowBackbone::CNNStar ? cfg.dropout_p : 0.0;
        std::size_t c_in = cfg.flow_channels();
        for (std::size_t s = 0; s < 4; ++s) {
            const std::size_t c_out = cfg.cnn_channels[s];
            conv[s] = nn::Conv2d<T>(c_out, c_in, 3, 2, 1, rng);
            if (kind != FlowBackbone::NaiveCNN) bn[s] = nn::BatchNorm2d<T>(c_out);
            if (kind == FlowBackbone::ResidualCNN) {
                conv_b[s] = nn::Conv2d<T>(c_out, c_out, 3, 1, 1, rng);
                bn_b[s] = nn::BatchNorm2d<T>(c_out);
                conv_skip[s] = nn::Conv2d<T>(c_out, c_in, 1, 2, 0, rng);
                bn_skip[s] = nn::BatchNorm2d<T>(c_out);
            }
            c_in = c_out;
        }
        fc = nn::Linear<T>(cfg.flow_feature_dim, cfg.cnn_channels[3], rng);
    }

    void reg(nn::ParamRegistry<T>& r, const std::string& p) {
        for (std::size_t s = 0; s < 4; ++s) {
            const std::string sp = p + ".stage" + std::to_string(s);
            conv[s].reg(r, sp + ".conv");
            if (kind != FlowBackbone::NaiveCNN) bn[s].reg(r, sp + ".bn");
            if (kind == FlowBackbone::ResidualCNN) {
                conv_b[s].reg(r, sp + ".conv_b");
                bn_b[s].reg(r, sp + ".bn_b");
                conv_skip[s].reg(r, sp + ".conv_skip");
                bn_skip[s].reg(r, sp + ".bn_skip");
            }
        }
        fc.reg(r, p + ".fc");
    }

    Tensor<T> forward(const Tensor<T>& x, const nn::StepContext& ctx) {
        Tensor<T> h = x;
        for (std::size_t s = 0; s < 4; ++s) {
            if (kind == FlowBackbone::ResidualCNN) {
                Tensor<T> main = conv[s].forward(h);
                main = bn[s].forward(main, ctx.training);
                res_mid_pre[s] = main;
                main = nn::relu(main);
                main = conv_b[s].forward(main);
                main = bn_b[s].forward(main, ctx.training);
                Tensor<T> skip = conv_skip[s].forward(h);
                skip = bn_skip[s].forward(skip, ctx.training);
                nn::add_inplace(main, skip);
                pre_relu[s] = main;
                h = nn::relu(main);
            } else {
                Tensor<T> z = conv[s].forward(h);
                if (kind == FlowBackbone::CNNStar) z = bn[s].forward(z, ctx.training);
                pre_relu[s] = z;
                h = nn::relu(z);
            }
        }
        gap_in_shape = h.shape;
        gap_out = nn::global_avg_pool(h);
        Tensor<T> feat = gap_out;
        if (kind == FlowBackbone::CNNStar) feat = dropout.forward(feat, ctx);
        return fc.forward(feat);
    }

    // returns nothing; input gradients are not needed (first layer of the net)
    void backward(const Tensor<T>& gout) {
        Tensor<T> g = fc.backward(gout);
        if (kind == FlowBackbone::CNNStar) g = dropout.backward(g);
        Tensor<T> gh = nn::global_avg_pool_backward(gap_in_shape, g);
        for (std::size_t s = 4; s-- > 0;) {
            gh = nn::relu_backward(pre_relu[s], gh);
            if (kind == FlowBackbone::ResidualCNN) {
                Tensor<T> gskip = bn_skip[s].backward(gh);
                Tensor<T> gmain = bn_b[s].backward(gh);
                gmain = conv_b[s].backward(gmain);
                gmain = nn::relu_backward(res_mid_pre[s], gmain);
                gmain = bn[s].backward(gmain);
                Tensor<T> gin = conv[s].backward(gmain, s > 0);
                Tensor<T> gin2 = conv_skip[s].backward(gskip, s > 0);
                if (s > 0) {
                    nn::add_inplace(gin, gin2);
                    gh = std::move(gin);
                }
            } else {
                if (kind == FlowBackbone::CNNStar) gh = bn[s].backward(gh);
                gh = conv[s].backward(gh, s > 0);
            }
        }
    }
};

// [N, d_in] -> [N, d_out] two-layer MLP with ReLU
template <Real T>
struct MlpExtractor {
    nn::Linear<T> fc1, fc2;
    Tensor<T> pre_relu;

    MlpExtractor() = default;
    MlpExtractor(std::size_t d_in, std::size_t hidden, std::size_t d_out, std::mt19937_64& rng) {
        fc1 = nn::Linear<T>(hidden, d_in, rng);
        fc2 = nn::Linear<T>(d_out, hidden, rng);
    }
    void reg(nn::ParamRegistry<T>& r, const std::string& p) {
        fc1.reg(r, p + ".fc1");
        fc2.reg(r, p + ".fc2");
    }
    Tensor<T> forward(const Tensor<T>& x) {
        pre_relu = fc1.forward(x);
        return fc2.forward(nn::relu(pre_relu));
    }
    Tensor<T> backward(const Tensor<T>& gout) {
        Tensor<T> g = fc2.backward(gout);
        g = nn::relu_backward(pre_relu, g);
        return fc1.backward(g);
    }
};

// ------------------------------------------------------------------ inputs

template <Real T>
struct SeqInput {
    std::size_t length = 0;
    Tensor<T> s1, s2;      // [N, C, H, W] when enabled, empty otherwise
    Tensor<T> wrench;      // [N, 6]
    Tensor<T> joints;      // [N, 4]

    static SeqInput from(const data::ModelInputSequence& seq) {
        SeqInput in;
        in.length = seq.length;
        auto stack = [&](const std::vector<TensorF>& steps) {
            Tensor<T> out;
            if (steps.empty()) return out;
            const auto& s0 = steps[0].shape;
            out = Tensor<T>({steps.size(), s0[0], s0[1], s0[2]});
            const std::size_t stride = steps[0].numel();
            for (std::size_t k = 0; k < steps.size(); ++k)
                for (std::size_t i = 0; i < stride; ++i)
                    out.data[k * stride + i] = static_cast<T>(steps[k].data[i]);
            return out;
        };
        in.s1 = stack(seq.s1_flow);
        in.s2 = stack(seq.s2_flow);
        if (!seq.wrench.empty()) {
            in.wrench = Tensor<T>({seq.wrench.size(), 6});
            for (std::size_t k = 0; k < seq.wrench.size(); ++k)
                for (std::size_t i = 0; i < 6; ++i)
                    in.wrench.data[k * 6 + i] = static_cast<T>(seq.wrench[k][i]);
        }
        if (!seq.joints.empty()) {
            in.joints = Tensor<T>({seq.joints.size(), 4});
            for (std::size_t k = 0; k < seq.joints.size(); ++k)
                for (std::size_t i = 0; i < 4; ++i)
                    in.joints.data[k * 4 + i] = static_cast<T>(seq.joints[k][i]);
        }
        return in;
    }
};

// ------------------------------------------------------------------- model

template <Real T>
struct Model {
    ModelConfig config;
    nn::ParamRegistry<T> registry;

    FlowExtractor<T> s1_ext, s2_ext;
    MlpExtractor<T> wrench_ext, joint_ext;
    nn::Linear<T> fuse_proj;
    std::vector<nn::EncoderLayer<T>> encoder;
    nn::Linear<T> head1, head2;

    // caches
    Tensor<T> cached_head_pre_relu;
    std::size_t cached_n = 0;

    struct Output {
        Tensor<T> probs;   // [num_classes]
        Tensor<T> logits;  // [num_classes]
        Tensor<T> latent;  // [d_model], post mean-pool, pre head
    };

    explicit Model(const ModelConfig& cfg) : config(cfg) {
        config.validate();
        auto rng = make_rng(derive_seed(config.init_seed, 0x0de1ULL));
        build(rng);
    }

    Model(const ModelConfig& cfg, std::mt19937_64& rng) : config(cfg) {
        config.validate();
        build(rng);
    }

    void build(std::mt19937_64& rng) {
        if (config.input_mask.s1_flow) {
            s1_ext = FlowExtractor<T>(config, rng);
            s1_ext.reg(registry, "s1");
        }
        if (config.input_mask.s2_flow) {
            s2_ext = FlowExtractor<T>(config, rng);
            s2_ext.reg(registry, "s2");
        }
        if (config.input_mask.wrench) {
            wrench_ext = MlpExtractor<T>(6, config.mlp_hidden, config.wrench_feature_dim, rng);
            wrench_ext.reg(registry, "wrench");
        }
        if (config.input_mask.joints) {
            joint_ext = MlpExtractor<T>(4, config.mlp_hidden, config.joint_feature_dim, rng);
            joint_ext.reg(registry, "joints");
        }
        fuse_proj = nn::Linear<T>(config.d_model, config.concat_dim(), rng);
        fuse_proj.reg(registry, "fuse");
        if (config.classifier == ClassifierKind::Transformer) {
            encoder.reserve(config.num_layers);
            for (std::size_t l = 0; l < config.num_layers; ++l) {
                encoder.emplace_back(config.d_model, config.nhead, config.d_ff, rng);
                encoder.back().reg(registry, "encoder" + std::to_string(l));
            }
        }
        head1 = nn::Linear<T>(config.head_hidden, config.d_model, rng);
        head1.reg(registry, "head1");
        head2 = nn::Linear<T>(config.num_classes, config.head_hidden, rng);
        head2.reg(registry, "head2");
    }

    void check_input_shapes(const SeqInput<T>& in) const {
        auto check_flow = [&](const Tensor<T>& t, const char* name) {
            if (t.ndim() != 4)
                throw shape_error(std::string("model: ") + name + " input missing or not [N,C,H,W]");
            if (t.shape[1] != config.flow_channels() || t.shape[2] != config.pooled_h ||
                t.shape[3] != config.pooled_w)
                throw shape_error(std::string("model: ") + name + " input " +
                                  Tensor<T>(t.shape).shape_str() + " does not match configured " +
                                  std::to_string(config.flow_channels()) + "x" +
                                  std::to_string(config.pooled_h) + "x" +
                                  std::to_string(config.pooled_w));
        };
        if (config.input_mask.s1_flow) check_flow(in.s1, "s1 flow");
        if (config.input_mask.s2_flow) check_flow(in.s2, "s2 flow");
        if (config.input_mask.wrench && (in.wrench.ndim() != 2 || in.wrench.shape[1] != 6))
            throw shape_error("model: wrench input missing or not [N,6]");
        if (config.input_mask.joints && (in.joints.ndim() != 2 || in.joints.shape[1] != 4))
            throw shape_error("model: joint input missing or not [N,4]");
    }

    // extract + fuse + project: [N, d_model], before positional encoding
    Tensor<T> forward_features(const SeqInput<T>& in, const nn::StepContext& ctx) {
        check_input_shapes(in);
        const std::size_t n = in.length;
        if (n == 0) throw format_error("model: empty input sequence");
        cached_n = n;

        std::vector<const Tensor<T>*> parts;
        Tensor<T> f_s1, f_s2, f_w, f_j;
        if (config.input_mask.s1_flow) {
            f_s1 = s1_ext.forward(in.s1, ctx);
            f_s1.check_finite("s1 flow extractor");
            parts.push_back(&f_s1);
        }
        if (config.input_mask.s2_flow) {
            f_s2 = s2_ext.forward(in.s2, ctx);
            f_s2.check_finite("s2 flow extractor");
            parts.push_back(&f_s2);
        }
        if (config.input_mask.wrench) {
            f_w = wrench_ext.forward(in.wrench);
            f_w.check_finite("wrench extractor");
            parts.push_back(&f_w);
        }
        if (config.input_mask.joints) {
            f_j = joint_ext.forward(in.joints);
            f_j.check_finite("joint extractor");
            parts.push_back(&f_j);
        }

        // concatenate per step
        const std::size_t cdim = config.concat_dim();
        Tensor<T> fused({n, cdim});
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t at = 0;
            for (const Tensor<T>* p : parts) {
                const std::size_t d = p->shape[1];
                for (std::size_t i = 0; i < d; ++i)
                    fused.data[k * cdim + at + i] = p->data[k * d + i];
                at += d;
            }
        }
        return fuse_proj.forward(fused);
    }

    // positional encoding + encoder (transformer) or plain pooling, then head
    Output classify_features(const Tensor<T>& features, const nn::StepContext&) {
        Tensor<T> h = features;
        const std::size_t n = h.shape[0];
        cached_n = n;
        if (config.classifier == ClassifierKind::Transformer) {
            nn::add_positional_encoding(h);
            for (std::size_t l = 0; l < encoder.size(); ++l) {
                h = encoder[l].forward(h);
                h.check_finite("encoder layer " + std::to_string(l));
            }
        }
        Tensor<T> latent = nn::mean_over_rows(h);

        cached_head_pre_relu = head1.forward(latent);
        Tensor<T> logits = head2.forward(nn::relu(cached_head_pre_relu));
        logits.check_finite("classification head");

        Output out;
        out.logits = logits;
        out.latent = latent;
        out.probs = nn::softmax(logits);
        return out;
    }

    Output forward(const SeqInput<T>& in, const nn::StepContext& ctx) {
        return classify_features(forward_features(in, ctx), ctx);
    }

    // Backward from the cross-entropy gradient at the logits. Parameter
    // gradients accumulate; callers zero the registry per batch.
    void backward(const Tensor<T>& glogits) {
        Tensor<T> g = head2.backward(glogits);
        g = nn::relu_backward(cached_head_pre_relu, g);
        Tensor<T> glatent = head1.backward(g);
        Tensor<T> gh = nn::mean_over_rows_backward(cached_n, glatent);
        if (config.classifier == ClassifierKind::Transformer) {
            for (std::size_t l = encoder.size(); l-- > 0;) gh = encoder[l].backward(gh);
            // positional encoding is additive: gradient passes through
        }
        Tensor<T> gfused = fuse_proj.backward(gh);

        const std::size_t n = cached_n;
        std::size_t at = 0;
        auto slice = [&](std::size_t d) {
            Tensor<T> g_part({n, d});
            const std::size_t cdim = config.concat_dim();
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t i = 0; i < d; ++i)
                    g_part.data[k * d + i] = gfused.data[k * cdim + at + i];
            at += d;
            return g_part;
        };
        if (config.input_mask.s1_flow) s1_ext.backward(slice(config.flow_feature_dim));
        if (config.input_mask.s2_flow) s2_ext.backward(slice(config.flow_feature_dim));
        if (config.input_mask.wrench) wrench_ext.backward(slice(config.wrench_feature_dim));
        if (config.input_mask.joints) joint_ext.backward(slice(config.joint_feature_dim));
    }

    // convenience: forward + loss + backward for one labeled sequence
    T train_step_accumulate(const data::ModelInputSequence& seq, const nn::StepContext& ctx) {
        const SeqInput<T> in = SeqInput<T>::from(seq);
        Output out = forward(in, ctx);
        const T loss = nn::cross_entropy(out.logits, seq.label);
        Tensor<T> glogits = nn::cross_entropy_backward(out.logits, seq.label);
        backward(glogits);
        return loss;
    }
};

using ModelF = Model<float>;

}  // namespace tact::model

#endif
