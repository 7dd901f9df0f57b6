#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "veridian/tensor.hpp"
#include "veridian/text_pipeline.hpp"

namespace veridian {

// standard: absolute learned positions, independent blocks (RoBERTa-like).
// relative_position: no position table, per-head learned bias on the
//   clipped key-query offset (XLNet / Transformer-XL-like).
// shared_layers: factorized V x E embedding plus E x H projection and a
//   single block reused at every layer (ALBERT-like).
enum class EncoderVariant { standard, relative_position, shared_layers };

std::string_view to_string(EncoderVariant v) noexcept;
EncoderVariant parse_variant(std::string_view text);

struct EncoderConfig {
    EncoderVariant variant = EncoderVariant::standard;
    std::size_t num_layers = 2;
    std::size_t hidden = 32;
    std::size_t heads = 2;
    std::size_t ffn_dim = 64;
    std::size_t vocab_size = 5000;
    std::size_t max_length = 64;
    std::size_t embed_dim = 16; // shared_layers only
    std::size_t num_classes = 2;
    std::uint64_t seed = 0;

    // Throws Error(BadConfig) when an invariant fails.
    void validate() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline constexpr float kLayerNormEps = 1e-5f;
inline constexpr double kInitStddev = 0.02;

// Parameter handles for one transformer block. relative_bias is undefined
// unless the variant is relative_position.
struct BlockParameters {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor relative_bias;
    Tensor ln1_gamma, ln1_beta;
    Tensor w1, b1, w2, b2;
    Tensor ln2_gamma, ln2_beta;
};

class ModelParameters {
public:
    ModelParameters() = default;

    const EncoderConfig& config() const noexcept { return config_; }

    // Parameter names in creation (and checkpoint) order.
    const std::vector<std::string>& names() const noexcept { return names_; }
    const Tensor& at(std::string_view name) const;
    bool contains(std::string_view name) const;
    NamedTensors named() const;

    // Block used at `layer`; every layer maps to the same tensors for
    // shared_layers.
    BlockParameters block(std::size_t layer) const;
    // Names of the distinct block parameters (all layers).
    std::vector<std::string> block_parameter_names() const;

    // Free-form string metadata carried through checkpoints.
    std::map<std::string, std::string>& metadata() noexcept { return metadata_; }
    const std::map<std::string, std::string>& metadata() const noexcept {
        return metadata_;
    }

    // Deep copy; the copy shares no storage with *this.
    ModelParameters clone() const;
    // Overwrites parameter values from `other` (same inventory required).
    void assign_values(const ModelParameters& other);
    bool bit_equal(const ModelParameters& other) const;

    void set_requires_grad(bool value);

private:
    friend ModelParameters build_encoder(const EncoderConfig& config);
    friend ModelParameters load_checkpoint(std::string_view bytes);

    void add(std::string name, Tensor t);
    std::string block_prefix(std::size_t layer) const;

    EncoderConfig config_;
    std::vector<std::string> names_;
    std::map<std::string, Tensor, std::less<>> tensors_;
    std::map<std::string, std::string> metadata_;
};

// Names and shapes of every parameter for `config`, in creation order.
std::vector<std::pair<std::string, Shape>> parameter_inventory(const EncoderConfig& config);

// Deterministic initialization from config.seed: weights ~ N(0, 0.02)
// truncated at 2 sigma, biases and layer-norm beta 0, layer-norm gamma 1.
ModelParameters build_encoder(const EncoderConfig& config);

// One post-LN transformer block over packed [B*T x H] activations.
Tensor apply_block(const BlockParameters& block, const Tensor& x,
                   const ops::AttentionShape& dims,
                   std::span<const std::uint8_t> mask);

// Logits [B x num_classes] read from the CLS position.
Tensor forward(const ModelParameters& model, std::span<const TokenSequence> batch);

std::size_t param_count(const ModelParameters& model);
// Token embedding table plus (shared_layers) the E x H projection.
std::size_t token_embedding_param_count(const ModelParameters& model);
std::size_t block_param_count(const ModelParameters& model);
std::size_t classifier_param_count(const ModelParameters& model);

// Binary checkpoint: "VRDN", u16 version, u32-length-prefixed key=value
// config block, then per parameter a u32 name length, name, u32 rank, u32
// dims and little-endian float32 values.
inline constexpr std::uint16_t kCheckpointVersion = 1;
std::string save_checkpoint(const ModelParameters& model);
ModelParameters load_checkpoint(std::string_view bytes);
void write_checkpoint(const ModelParameters& model, const std::filesystem::path& path);
ModelParameters read_checkpoint(const std::filesystem::path& path);

} // namespace veridian
