#include <cstring>
#include <fstream>
#include <json.hpp>

#include "mixforge/errors.hpp"
#include "mixforge/prompt_model.hpp"

namespace mixforge::model {

namespace {

constexpr char kMagic[8] = {'M', 'X', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("truncated checkpoint " + path.string());
    return v;
}

}  // namespace

template <typename Real>
void save_checkpoint(const PromptModel<Real>& model, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& metadata) {
    nlohmann::ordered_json header;
    header["format"] = "mixforge-checkpoint";
    header["config"] = model.config().to_map();
    header["metadata"] = metadata;
    auto& list = header["tensors"] = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& p : model.parameters()) {
        list.push_back({{"name", p.name},
                        {"shape", p.tensor.shape()},
                        {"trainable", p.trainable},
                        {"offset", offset},
                        {"count", p.tensor.numel()}});
        offset += p.tensor.numel();
    }
    const std::string text = header.dump();

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint " + path.string());
        out.write(kMagic, sizeof kMagic);
        put<std::uint32_t>(out, kVersion);
        put<std::uint64_t>(out, text.size());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& p : model.parameters()) {
            for (Real v : p.tensor.data()) put<double>(out, static_cast<double>(v));
        }
        if (!out) throw DataError("failed writing checkpoint " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw DataError(path.string() + " is not a mixforge checkpoint");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto header_len = get<std::uint64_t>(in, path);
    if (header_len > (1u << 26)) throw DataError("checkpoint header too large");
    std::string text(header_len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw DataError("truncated checkpoint header");

    Checkpoint ckpt;
    try {
        const auto header = nlohmann::json::parse(text);
        for (const auto& [key, value] : header.at("config").items()) {
            if (!ckpt.config.set(key, value.get<std::string>())) {
                throw DataError("checkpoint config has unknown key '" + key + "'");
            }
        }
        if (header.contains("metadata")) {
            ckpt.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
        }
        std::uint64_t expected = 0;
        for (const auto& t : header.at("tensors")) {
            Checkpoint::Entry e;
            e.name = t.at("name").get<std::string>();
            e.shape = t.at("shape").get<ad::Shape>();
            e.trainable = t.at("trainable").get<bool>();
            const auto offset = t.at("offset").get<std::uint64_t>();
            const auto count = t.at("count").get<std::uint64_t>();
            if (offset != expected || count != ad::numel(e.shape)) {
                throw DataError("checkpoint tensor '" + e.name + "' has inconsistent layout");
            }
            expected += count;
            e.values.resize(count);
            ckpt.tensors.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint header: ") + e.what());
    }
    for (auto& e : ckpt.tensors) {
        if (!in.read(reinterpret_cast<char*>(e.values.data()),
                     static_cast<std::streamsize>(e.values.size() * sizeof(double)))) {
            throw DataError("truncated checkpoint data for '" + e.name + "'");
        }
    }
    return ckpt;
}

template <typename Real>
PromptModel<Real> load_model(const Checkpoint& ckpt) {
    PromptModel<Real> model(ckpt.config);
    auto& params = model.parameters();
    if (params.size() != ckpt.tensors.size()) throw DataError("checkpoint tensor count does not match its config");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = ckpt.tensors[i];
        if (e.name != params[i].name || e.shape != params[i].tensor.shape() || e.trainable != params[i].trainable) {
            throw DataError("checkpoint tensor '" + e.name + "' does not match the model layout");
        }
        auto out = params[i].tensor.mutable_data();
        for (std::size_t j = 0; j < e.values.size(); ++j) out[j] = static_cast<Real>(e.values[j]);
    }
    return model;
}

template void save_checkpoint(const PromptModel<float>&, const std::filesystem::path&,
                              const std::map<std::string, std::string>&);
template void save_checkpoint(const PromptModel<double>&, const std::filesystem::path&,
                              const std::map<std::string, std::string>&);
template PromptModel<float> load_model(const Checkpoint&);
template PromptModel<double> load_model(const Checkpoint&);

}  // namespace mixforge::model
