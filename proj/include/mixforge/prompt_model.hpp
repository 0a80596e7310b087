#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mixforge/autodiff.hpp"

namespace mixforge::model {

struct StreamMask {
    bool base = true;
    bool fre = true;
    bool tex = true;

    std::size_t count() const { return static_cast<std::size_t>(base) + fre + tex; }
    std::string label() const;  // e.g. "base+fre+tex"
};

struct ModelConfig {
    std::size_t n_layers = 4;
    std::size_t embed_dim = 64;
    std::size_t n_heads = 4;
    std::size_t prompt_len = 4;
    std::size_t ffn_dim = 128;
    std::size_t head_hidden = 64;
    std::size_t pool_window = 3;
    std::size_t encoder_channels = 32;  // width of the intermediate conv layers
    std::vector<std::size_t> conv_kernels{10, 8, 8, 8};
    std::vector<std::size_t> conv_strides{5, 4, 4, 4};
    std::size_t input_samples = 64000;
    StreamMask streams;
    bool carry_prompts = false;
    bool wrap_if = true;
    bool per_dim_gate = false;
    // The frozen encoder and blocks stand in for a pretrained backbone and are
    // drawn from their own seed, so every run shares the same backbone.
    std::uint64_t backbone_seed = 0;
    std::uint64_t init_seed = 0;  // trainable parameters

    // Throws UsageError on an inconsistent configuration.
    void validate() const;
    std::size_t total_stride() const;
    // Feature frames T produced by the encoder for input_samples.
    std::size_t frames() const;
    // Rows entering every block: T + k p with k active streams.
    std::size_t injected_rows() const { return frames() + streams.count() * prompt_len; }

    // key=value setters shared by the config file reader and CLI overrides.
    // Returns false for an unknown key; throws UsageError for a bad value.
    bool set(const std::string& key, const std::string& value);
    std::map<std::string, std::string> to_map() const;
};

// A length-reduced configuration used by gradient and shape tests:
// T frames of a 320-stride encoder.
ModelConfig small_config(std::size_t frames, std::size_t dim, std::size_t prompt_len, std::size_t layers);

// Frozen front end output for one utterance. Computed once and reused.
struct Features {
    std::size_t frames = 0;
    std::size_t dim = 0;
    std::vector<double> h_raw;    // frames x dim, row-major
    std::vector<double> psi_bar;  // dim
    std::vector<double> flux;     // dim
};

template <typename Real>
struct NamedParameter {
    std::string name;
    ad::Tensor<Real> tensor;
    bool trainable = false;
};

template <typename Real>
struct ForwardTrace {
    std::vector<std::size_t> injected_rows;  // rows of X^(i) per layer
    std::vector<ad::Tensor<Real>> layer_inputs;  // X^(i)
    std::vector<ad::Tensor<Real>> layer_outputs;  // H^(i+1)
    double gate = 0.0;  // first component when the gate is per-dimension
};

struct ForwardOptions {
    // Masks attention from content rows to prompt rows. Test hook: with it the
    // content rows of a block see exactly what they would without prompts.
    bool isolate_prompts = false;
};

template <typename Real>
class PromptModel {
public:
    using Tensor = ad::Tensor<Real>;

    explicit PromptModel(ModelConfig config);
    // Parameters are shared handles; copying would alias them.
    PromptModel(const PromptModel&) = delete;
    PromptModel& operator=(const PromptModel&) = delete;
    PromptModel(PromptModel&&) noexcept = default;
    PromptModel& operator=(PromptModel&&) noexcept = default;

    const ModelConfig& config() const { return config_; }

    // Strided conv stack with GELU and a final per-frame normalisation, plus
    // the texture cues derived from its output.
    Features extract(std::span<const double> samples) const;
    Features features_from_hidden(std::vector<double> h_raw, std::size_t frames) const;

    Tensor frequency_stream(const Tensor& p_fre) const;
    // Returns the gate g (1 x 1, or 1 x D with per_dim_gate).
    Tensor gate(const Features& f) const;
    Tensor texture_stream(const Tensor& p_tex, const Tensor& g, const Features& f) const;
    // Pre-norm transformer block on X with `prompt_rows` leading prompt rows.
    Tensor block(std::size_t layer, const Tensor& x, std::size_t prompt_rows, const ForwardOptions& opt = {}) const;
    Tensor inject_and_encode(std::size_t layer, const Tensor& h, const std::vector<Tensor>& prompts,
                             const ForwardOptions& opt = {}, ForwardTrace<Real>* trace = nullptr) const;
    Tensor classify(const Tensor& h_final) const;

    // Full pass to a 1 x 1 logit; sigmoid(logit) is P(bona fide).
    Tensor forward(const Features& f, ForwardTrace<Real>* trace = nullptr, const ForwardOptions& opt = {}) const;
    double score(const Features& f) const;

    std::vector<NamedParameter<Real>>& parameters() { return params_; }
    const std::vector<NamedParameter<Real>>& parameters() const { return params_; }
    std::vector<Tensor> trainable_parameters() const;
    std::vector<Tensor> frozen_parameters() const;
    std::size_t trainable_count() const;
    std::size_t frozen_count() const;
    Tensor& parameter(const std::string& name);
    const Tensor& parameter(const std::string& name) const;

    // Prompt bank accessors.
    const Tensor& prompt_base(std::size_t layer) const { return base_.at(layer); }
    const Tensor& prompt_fre(std::size_t layer) const { return fre_.at(layer); }
    const Tensor& prompt_tex(std::size_t layer) const { return tex_.at(layer); }

private:
    struct Block {
        Tensor ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_1, b_1, w_2, b_2;
    };

    Tensor add_parameter(const std::string& name, ad::Shape shape, double stddev, double mean, bool trainable);
    Tensor add_constant_parameter(const std::string& name, ad::Shape shape, double value, bool trainable);
    Tensor encode_layer(std::size_t layer, const Tensor& x, std::size_t prompt_rows,
                        const ForwardOptions& opt) const;

    ModelConfig config_;
    std::vector<NamedParameter<Real>> params_;
    std::vector<Tensor> base_, fre_, tex_;
    std::vector<Block> blocks_;
    std::vector<Tensor> conv_w_, conv_b_;
    Tensor fre_w_, fre_b_;
    Tensor gate_w1_, gate_b1_, gate_w2_, gate_b2_, tex_g_, tex_b_;
    Tensor head_w1_, head_b1_, head_w2_, head_b2_;
    // Constant p x p operators of the frequency stream.
    Tensor op_diff_, op_pool_, op_hilbert_, op_if_;
};

// Binary checkpoint: "MXFCKPT1", u32 version, u64 header length, JSON header
// (config, tensor names, shapes, trainable flags, offsets) and raw float64 data.
template <typename Real>
void save_checkpoint(const PromptModel<Real>& model, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& metadata = {});

struct Checkpoint {
    ModelConfig config;
    std::map<std::string, std::string> metadata;
    struct Entry {
        std::string name;
        ad::Shape shape;
        bool trainable = false;
        std::vector<double> values;
    };
    std::vector<Entry> tensors;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename Real>
PromptModel<Real> load_model(const Checkpoint& ckpt);

// Copies every parameter value of `from` into `to` (same config).
template <typename Real>
void copy_parameters(const PromptModel<Real>& from, PromptModel<Real>& to);

}  // namespace mixforge::model
