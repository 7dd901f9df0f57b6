#include "veridian/encoder.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "veridian/error.hpp"
#include "veridian/random.hpp"

namespace veridian {

std::string_view to_string(EncoderVariant v) noexcept {
    switch (v) {
    case EncoderVariant::standard: return "standard";
    case EncoderVariant::relative_position: return "relative_position";
    case EncoderVariant::shared_layers: return "shared_layers";
    }
    return "standard";
}

EncoderVariant parse_variant(std::string_view text) {
    for (auto v : {EncoderVariant::standard, EncoderVariant::relative_position,
                   EncoderVariant::shared_layers}) {
        if (text == to_string(v)) {
            return v;
        }
    }
    throw Error(ErrorCode::BadConfig, "unknown encoder variant '" + std::string(text) + "'");
}

void EncoderConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::BadConfig, what); };
    if (num_layers < 1) fail("num_layers must be >= 1");
    if (hidden < 1) fail("hidden must be >= 1");
    if (heads < 1 || hidden % heads != 0) fail("hidden must be divisible by heads");
    if (ffn_dim < 1) fail("ffn_dim must be >= 1");
    if (vocab_size < Vocabulary::reserved_count) fail("vocab_size must be >= 3");
    if (max_length < 2) fail("max_length must be >= 2");
    if (num_classes != 2) fail("num_classes must be 2");
    if (variant == EncoderVariant::shared_layers && (embed_dim < 1 || embed_dim > hidden)) {
        fail("embed_dim must lie in [1, hidden]");
    }
}

namespace {

enum class Init { weight, zero, one };

Init init_for(std::string_view name) {
    const auto dot = name.rfind('.');
    const std::string_view leaf = dot == std::string_view::npos ? name : name.substr(dot + 1);
    if (leaf == "gamma") return Init::one;
    if (leaf == "beta" || leaf == "bias" || (leaf.size() == 2 && leaf[0] == 'b')) {
        return Init::zero;
    }
    return Init::weight;
}

void append_block(std::vector<std::pair<std::string, Shape>>& inv,
                  const std::string& prefix, const EncoderConfig& c) {
    const std::size_t H = c.hidden;
    for (const char* proj : {"wq", "wk", "wv", "wo"}) {
        inv.emplace_back(prefix + "attn." + proj, Shape{H, H});
        inv.emplace_back(prefix + "attn.b" + std::string(proj + 1), Shape{H});
    }
    if (c.variant == EncoderVariant::relative_position) {
        inv.emplace_back(prefix + "attn.rel_bias", Shape{c.heads, 2 * c.max_length - 1});
    }
    inv.emplace_back(prefix + "ln1.gamma", Shape{H});
    inv.emplace_back(prefix + "ln1.beta", Shape{H});
    inv.emplace_back(prefix + "ffn.w1", Shape{H, c.ffn_dim});
    inv.emplace_back(prefix + "ffn.b1", Shape{c.ffn_dim});
    inv.emplace_back(prefix + "ffn.w2", Shape{c.ffn_dim, H});
    inv.emplace_back(prefix + "ffn.b2", Shape{H});
    inv.emplace_back(prefix + "ln2.gamma", Shape{H});
    inv.emplace_back(prefix + "ln2.beta", Shape{H});
}

} // namespace

std::vector<std::pair<std::string, Shape>> parameter_inventory(const EncoderConfig& c) {
    c.validate();
    std::vector<std::pair<std::string, Shape>> inv;
    switch (c.variant) {
    case EncoderVariant::standard:
        inv.emplace_back("embed.token", Shape{c.vocab_size, c.hidden});
        inv.emplace_back("embed.position", Shape{c.max_length, c.hidden});
        break;
    case EncoderVariant::relative_position:
        inv.emplace_back("embed.token", Shape{c.vocab_size, c.hidden});
        break;
    case EncoderVariant::shared_layers:
        inv.emplace_back("embed.token", Shape{c.vocab_size, c.embed_dim});
        inv.emplace_back("embed.position", Shape{c.max_length, c.embed_dim});
        inv.emplace_back("embed.projection", Shape{c.embed_dim, c.hidden});
        break;
    }
    if (c.variant == EncoderVariant::shared_layers) {
        append_block(inv, "shared.", c);
    } else {
        for (std::size_t l = 0; l < c.num_layers; ++l) {
            append_block(inv, "layer" + std::to_string(l) + ".", c);
        }
    }
    inv.emplace_back("classifier.weight", Shape{c.hidden, c.num_classes});
    inv.emplace_back("classifier.bias", Shape{c.num_classes});
    return inv;
}

void ModelParameters::add(std::string name, Tensor t) {
    names_.push_back(name);
    tensors_.emplace(std::move(name), std::move(t));
}

const Tensor& ModelParameters::at(std::string_view name) const {
    const auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw Error(ErrorCode::BadConfig, "no parameter named '" + std::string(name) + "'");
    }
    return it->second;
}

bool ModelParameters::contains(std::string_view name) const {
    return tensors_.find(name) != tensors_.end();
}

NamedTensors ModelParameters::named() const {
    NamedTensors out;
    for (const auto& [name, t] : tensors_) {
        out.emplace(name, t);
    }
    return out;
}

std::string ModelParameters::block_prefix(std::size_t layer) const {
    if (config_.variant == EncoderVariant::shared_layers) {
        return "shared.";
    }
    return "layer" + std::to_string(layer) + ".";
}

BlockParameters ModelParameters::block(std::size_t layer) const {
    if (layer >= config_.num_layers) {
        throw Error(ErrorCode::BadConfig, "layer index out of range");
    }
    const std::string p = block_prefix(layer);
    BlockParameters b;
    b.wq = at(p + "attn.wq");
    b.bq = at(p + "attn.bq");
    b.wk = at(p + "attn.wk");
    b.bk = at(p + "attn.bk");
    b.wv = at(p + "attn.wv");
    b.bv = at(p + "attn.bv");
    b.wo = at(p + "attn.wo");
    b.bo = at(p + "attn.bo");
    if (contains(p + "attn.rel_bias")) {
        b.relative_bias = at(p + "attn.rel_bias");
    }
    b.ln1_gamma = at(p + "ln1.gamma");
    b.ln1_beta = at(p + "ln1.beta");
    b.w1 = at(p + "ffn.w1");
    b.b1 = at(p + "ffn.b1");
    b.w2 = at(p + "ffn.w2");
    b.b2 = at(p + "ffn.b2");
    b.ln2_gamma = at(p + "ln2.gamma");
    b.ln2_beta = at(p + "ln2.beta");
    return b;
}

std::vector<std::string> ModelParameters::block_parameter_names() const {
    std::vector<std::string> out;
    for (const auto& name : names_) {
        if (name.starts_with("layer") || name.starts_with("shared.")) {
            out.push_back(name);
        }
    }
    return out;
}

ModelParameters ModelParameters::clone() const {
    ModelParameters copy;
    copy.config_ = config_;
    copy.metadata_ = metadata_;
    for (const auto& name : names_) {
        copy.add(name, at(name).clone());
    }
    return copy;
}

void ModelParameters::assign_values(const ModelParameters& other) {
    if (names_ != other.names_) {
        throw Error(ErrorCode::ShapeMismatch, "parameter inventories differ");
    }
    for (const auto& name : names_) {
        Tensor dst = at(name);
        const Tensor& src = other.at(name);
        if (dst.shape() != src.shape()) {
            throw Error(ErrorCode::ShapeMismatch, "shape mismatch for " + name);
        }
        std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
    }
}

bool ModelParameters::bit_equal(const ModelParameters& other) const {
    if (!(config_ == other.config_) || names_ != other.names_ ||
        metadata_ != other.metadata_) {
        return false;
    }
    for (const auto& name : names_) {
        if (!at(name).bit_equal(other.at(name))) {
            return false;
        }
    }
    return true;
}

void ModelParameters::set_requires_grad(bool value) {
    for (auto& [name, t] : tensors_) {
        t.set_requires_grad(value);
    }
}

ModelParameters build_encoder(const EncoderConfig& config) {
    config.validate();
    ModelParameters model;
    model.config_ = config;
    Rng rng(config.seed);
    for (auto& [name, shape] : parameter_inventory(config)) {
        const std::size_t n = shape_size(shape);
        std::vector<float> values(n);
        switch (init_for(name)) {
        case Init::one:
            std::fill(values.begin(), values.end(), 1.0f);
            break;
        case Init::zero:
            break;
        case Init::weight:
            for (auto& v : values) {
                v = static_cast<float>(rng.truncated_normal(kInitStddev));
            }
            break;
        }
        model.add(name, Tensor(std::move(shape), std::move(values), true));
    }
    return model;
}

Tensor apply_block(const BlockParameters& p, const Tensor& x,
                   const ops::AttentionShape& dims,
                   std::span<const std::uint8_t> mask) {
    using namespace ops;
    const Tensor q = add_row_vector(matmul(x, p.wq), p.bq);
    const Tensor k = add_row_vector(matmul(x, p.wk), p.bk);
    const Tensor v = add_row_vector(matmul(x, p.wv), p.bv);
    const Tensor ctx = attention(q, k, v, dims, mask, p.relative_bias);
    const Tensor attn_out = add_row_vector(matmul(ctx, p.wo), p.bo);
    const Tensor h1 = layer_norm(add(x, attn_out), p.ln1_gamma, p.ln1_beta, kLayerNormEps);
    const Tensor ff = add_row_vector(
        matmul(gelu(add_row_vector(matmul(h1, p.w1), p.b1)), p.w2), p.b2);
    return layer_norm(add(h1, ff), p.ln2_gamma, p.ln2_beta, kLayerNormEps);
}

Tensor forward(const ModelParameters& model, std::span<const TokenSequence> batch) {
    const EncoderConfig& c = model.config();
    const std::size_t B = batch.size();
    const std::size_t T = c.max_length;
    if (B == 0) {
        throw Error(ErrorCode::ShapeMismatch, "forward on an empty batch");
    }
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> mask;
    std::vector<std::int32_t> positions;
    ids.reserve(B * T);
    mask.reserve(B * T);
    positions.reserve(B * T);
    for (const auto& seq : batch) {
        if (seq.ids.size() != T || seq.mask.size() != T) {
            throw Error(ErrorCode::BadSequenceLength,
                        "sequence length " + std::to_string(seq.ids.size()) +
                            " != max_length " + std::to_string(T));
        }
        for (std::size_t t = 0; t < T; ++t) {
            if (seq.ids[t] < 0 || static_cast<std::size_t>(seq.ids[t]) >= c.vocab_size) {
                throw Error(ErrorCode::IdOutOfVocab,
                            "token id " + std::to_string(seq.ids[t]) +
                                " >= vocab size " + std::to_string(c.vocab_size));
            }
            ids.push_back(seq.ids[t]);
            mask.push_back(seq.mask[t]);
            positions.push_back(static_cast<std::int32_t>(t));
        }
    }

    Tensor x;
    switch (c.variant) {
    case EncoderVariant::standard:
        x = ops::add(ops::embedding(model.at("embed.token"), ids),
                     ops::embedding(model.at("embed.position"), positions));
        break;
    case EncoderVariant::relative_position:
        x = ops::embedding(model.at("embed.token"), ids);
        break;
    case EncoderVariant::shared_layers:
        x = ops::matmul(ops::add(ops::embedding(model.at("embed.token"), ids),
                                 ops::embedding(model.at("embed.position"), positions)),
                        model.at("embed.projection"));
        break;
    }

    const ops::AttentionShape dims{B, T, c.heads};
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        x = apply_block(model.block(l), x, dims, mask);
    }

    std::vector<std::size_t> cls_rows(B);
    for (std::size_t b = 0; b < B; ++b) {
        cls_rows[b] = b * T;
    }
    const Tensor cls = ops::select_rows(x, cls_rows);
    return ops::add_row_vector(ops::matmul(cls, model.at("classifier.weight")),
                               model.at("classifier.bias"));
}

std::size_t param_count(const ModelParameters& model) {
    std::size_t n = 0;
    for (const auto& name : model.names()) {
        n += model.at(name).size();
    }
    return n;
}

std::size_t token_embedding_param_count(const ModelParameters& model) {
    std::size_t n = model.at("embed.token").size();
    if (model.contains("embed.projection")) {
        n += model.at("embed.projection").size();
    }
    return n;
}

std::size_t block_param_count(const ModelParameters& model) {
    std::size_t n = 0;
    for (const auto& name : model.block_parameter_names()) {
        n += model.at(name).size();
    }
    return n;
}

std::size_t classifier_param_count(const ModelParameters& model) {
    return model.at("classifier.weight").size() + model.at("classifier.bias").size();
}

// ---- checkpoint ------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'V', 'R', 'D', 'N'};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    bool done() const noexcept { return pos_ == bytes_.size(); }

    std::string_view take(std::size_t n) {
        if (bytes_.size() - pos_ < n) {
            throw Error(ErrorCode::CorruptCheckpoint, "truncated checkpoint");
        }
        const auto out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::uint16_t u16() {
        const auto b = take(2);
        return static_cast<std::uint16_t>(static_cast<unsigned char>(b[0]) |
                                          (static_cast<unsigned char>(b[1]) << 8));
    }

    std::uint32_t u32() {
        const auto b = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        }
        return v;
    }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::string config_block(const ModelParameters& model) {
    const EncoderConfig& c = model.config();
    std::ostringstream out;
    out << "variant=" << to_string(c.variant) << '\n'
        << "num_layers=" << c.num_layers << '\n'
        << "hidden=" << c.hidden << '\n'
        << "heads=" << c.heads << '\n'
        << "ffn_dim=" << c.ffn_dim << '\n'
        << "vocab_size=" << c.vocab_size << '\n'
        << "max_length=" << c.max_length << '\n'
        << "embed_dim=" << c.embed_dim << '\n'
        << "num_classes=" << c.num_classes << '\n'
        << "seed=" << c.seed << '\n';
    for (const auto& [key, value] : model.metadata()) {
        out << "meta." << key << '=' << value << '\n';
    }
    return out.str();
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument(value);
        }
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCode::CorruptCheckpoint, "bad value for " + key);
    }
}

} // namespace

std::string save_checkpoint(const ModelParameters& model) {
    std::string out(kMagic, sizeof(kMagic));
    put_u16(out, kCheckpointVersion);
    const std::string cfg = config_block(model);
    put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    for (const auto& name : model.names()) {
        const Tensor& t = model.at(name);
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) {
            put_u32(out, static_cast<std::uint32_t>(d));
        }
        for (float v : t.data()) {
            put_u32(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    return out;
}

ModelParameters load_checkpoint(std::string_view bytes) {
    Reader in(bytes);
    if (in.take(4) != std::string_view(kMagic, 4)) {
        throw Error(ErrorCode::CorruptCheckpoint, "bad magic");
    }
    const auto version = in.u16();
    if (version != kCheckpointVersion) {
        throw Error(ErrorCode::CorruptCheckpoint,
                    "unsupported version " + std::to_string(version));
    }
    const std::string cfg_text(in.take(in.u32()));

    ModelParameters model;
    EncoderConfig& c = model.config_;
    std::istringstream lines(cfg_text);
    std::string line;
    std::map<std::string, std::string> kv;
    while (std::getline(lines, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::CorruptCheckpoint, "bad config line '" + line + "'");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) {
            throw Error(ErrorCode::CorruptCheckpoint, "missing config key " + key);
        }
        return it->second;
    };
    try {
        c.variant = parse_variant(need("variant"));
    } catch (const Error& e) {
        if (e.code() != ErrorCode::BadConfig) {
            throw;
        }
        throw Error(ErrorCode::CorruptCheckpoint, e.what());
    }
    c.num_layers = parse_uint("num_layers", need("num_layers"));
    c.hidden = parse_uint("hidden", need("hidden"));
    c.heads = parse_uint("heads", need("heads"));
    c.ffn_dim = parse_uint("ffn_dim", need("ffn_dim"));
    c.vocab_size = parse_uint("vocab_size", need("vocab_size"));
    c.max_length = parse_uint("max_length", need("max_length"));
    c.embed_dim = parse_uint("embed_dim", need("embed_dim"));
    c.num_classes = parse_uint("num_classes", need("num_classes"));
    c.seed = parse_uint("seed", need("seed"));
    for (const auto& [key, value] : kv) {
        if (key.starts_with("meta.")) {
            model.metadata_[key.substr(5)] = value;
        }
    }

    std::vector<std::pair<std::string, Shape>> inventory;
    try {
        inventory = parameter_inventory(c);
    } catch (const Error& e) {
        throw Error(ErrorCode::CorruptCheckpoint, e.what());
    }
    for (auto& [expected_name, expected_shape] : inventory) {
        if (in.done()) {
            throw Error(ErrorCode::CorruptCheckpoint, "missing parameter " + expected_name);
        }
        const std::string name(in.take(in.u32()));
        if (name != expected_name) {
            throw Error(ErrorCode::CorruptCheckpoint,
                        "expected parameter " + expected_name + ", found " + name);
        }
        const std::uint32_t rank = in.u32();
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape.push_back(in.u32());
        }
        if (shape != expected_shape) {
            throw Error(ErrorCode::CorruptCheckpoint,
                        "shape mismatch for " + name + ": " + shape_string(shape));
        }
        std::vector<float> values(shape_size(shape));
        for (auto& v : values) {
            v = std::bit_cast<float>(in.u32());
        }
        model.add(name, Tensor(std::move(shape), std::move(values), true));
    }
    if (!in.done()) {
        throw Error(ErrorCode::CorruptCheckpoint, "trailing bytes after last parameter");
    }
    return model;
}

void write_checkpoint(const ModelParameters& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    const std::string bytes = save_checkpoint(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModelParameters read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::MissingFile, path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_checkpoint(buf.str());
}

} // namespace veridian
