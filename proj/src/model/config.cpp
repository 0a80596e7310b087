#include <charconv>
#include <sstream>

#include "mixforge/errors.hpp"
#include "mixforge/prompt_model.hpp"

namespace mixforge::model {

namespace {

std::size_t parse_count(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw UsageError("'" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError("'" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_count(key, item));
    if (out.empty()) throw UsageError("'" + key + "' expects a comma-separated list");
    return out;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

StreamMask parse_streams(const std::string& v) {
    StreamMask m{false, false, false};
    std::stringstream in(v);
    std::string item;
    while (std::getline(in, item, '+')) {
        if (item == "base") m.base = true;
        else if (item == "fre") m.fre = true;
        else if (item == "tex") m.tex = true;
        else throw UsageError("unknown stream '" + item + "' (expected base, fre, tex joined by '+')");
    }
    if (m.count() == 0) throw UsageError("at least one prompt stream must be active");
    return m;
}

}  // namespace

std::string StreamMask::label() const {
    std::string s;
    auto put = [&s](bool on, const char* name) {
        if (!on) return;
        if (!s.empty()) s += '+';
        s += name;
    };
    put(base, "base");
    put(fre, "fre");
    put(tex, "tex");
    return s;
}

void ModelConfig::validate() const {
    if (n_layers < 1) throw UsageError("n_layers must be >= 1");
    if (embed_dim < 1 || n_heads < 1 || embed_dim % n_heads != 0) {
        throw UsageError("embed_dim must be a positive multiple of n_heads");
    }
    if (prompt_len < 1) throw UsageError("prompt_len must be >= 1");
    if (streams.fre && prompt_len < 2) throw UsageError("the frequency stream needs prompt_len >= 2");
    if (streams.count() == 0) throw UsageError("at least one prompt stream must be active");
    if (ffn_dim < 1 || head_hidden < 1 || pool_window < 1 || encoder_channels < 1) {
        throw UsageError("ffn_dim, head_hidden, pool_window and encoder_channels must be positive");
    }
    if (conv_kernels.empty() || conv_kernels.size() != conv_strides.size()) {
        throw UsageError("conv_kernels and conv_strides must be non-empty and of equal length");
    }
    for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
        if (conv_kernels[i] < 1 || conv_strides[i] < 1) throw UsageError("conv kernels and strides must be positive");
    }
    if (input_samples < 1) throw UsageError("input_samples must be positive");
    if (frames() < 3) throw UsageError("the encoder must produce at least 3 frames");
}

std::size_t ModelConfig::total_stride() const {
    std::size_t s = 1;
    for (auto v : conv_strides) s *= v;
    return s;
}

std::size_t ModelConfig::frames() const {
    std::size_t n = input_samples;
    for (auto s : conv_strides) n = (n + s - 1) / s;
    return n;
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
    if (key == "n_layers") n_layers = parse_count(key, value);
    else if (key == "embed_dim") embed_dim = parse_count(key, value);
    else if (key == "n_heads") n_heads = parse_count(key, value);
    else if (key == "prompt_len") prompt_len = parse_count(key, value);
    else if (key == "ffn_dim") ffn_dim = parse_count(key, value);
    else if (key == "head_hidden") head_hidden = parse_count(key, value);
    else if (key == "pool_window") pool_window = parse_count(key, value);
    else if (key == "encoder_channels") encoder_channels = parse_count(key, value);
    else if (key == "conv_kernels") conv_kernels = parse_list(key, value);
    else if (key == "conv_strides") conv_strides = parse_list(key, value);
    else if (key == "input_samples") input_samples = parse_count(key, value);
    else if (key == "streams") streams = parse_streams(value);
    else if (key == "carry_prompts") carry_prompts = parse_bool(key, value);
    else if (key == "wrap_if") wrap_if = parse_bool(key, value);
    else if (key == "per_dim_gate") per_dim_gate = parse_bool(key, value);
    else if (key == "backbone_seed") backbone_seed = parse_count(key, value);
    else if (key == "init_seed") init_seed = parse_count(key, value);
    else return false;
    return true;
}

std::map<std::string, std::string> ModelConfig::to_map() const {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return {
        {"n_layers", std::to_string(n_layers)},
        {"embed_dim", std::to_string(embed_dim)},
        {"n_heads", std::to_string(n_heads)},
        {"prompt_len", std::to_string(prompt_len)},
        {"ffn_dim", std::to_string(ffn_dim)},
        {"head_hidden", std::to_string(head_hidden)},
        {"pool_window", std::to_string(pool_window)},
        {"encoder_channels", std::to_string(encoder_channels)},
        {"conv_kernels", join(conv_kernels)},
        {"conv_strides", join(conv_strides)},
        {"input_samples", std::to_string(input_samples)},
        {"streams", streams.label()},
        {"carry_prompts", b(carry_prompts)},
        {"wrap_if", b(wrap_if)},
        {"per_dim_gate", b(per_dim_gate)},
        {"backbone_seed", std::to_string(backbone_seed)},
        {"init_seed", std::to_string(init_seed)},
    };
}

ModelConfig small_config(std::size_t frames, std::size_t dim, std::size_t prompt_len, std::size_t layers) {
    ModelConfig c;
    c.n_layers = layers;
    c.embed_dim = dim;
    c.n_heads = dim % 4 == 0 ? 4 : (dim % 2 == 0 ? 2 : 1);
    c.prompt_len = prompt_len;
    c.ffn_dim = 2 * dim;
    c.head_hidden = dim;
    c.encoder_channels = 8;
    c.input_samples = frames * c.total_stride();
    return c;
}

}  // namespace mixforge::model
