#include <json.hpp>

#include <cstring>
#include <fstream>

#include "fetnet/harness.hpp"

namespace fetnet {

namespace {

constexpr char kMagic[8] = {'F', 'E', 'T', 'C', 'K', 'P', 'T', '\n'};
constexpr uint32_t kVersion = 1;

uint64_t fnv1a(const char* data, size_t n) {
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ull;
    }
    return h;
}

nlohmann::json manifest_of(const std::vector<std::pair<std::string, Tensor>>& params) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [name, t] : params) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        arr.push_back(e);
    }
    return arr;
}

template <typename T> void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T> void read_pod(std::ifstream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("checkpoint: truncated file " + path);
}

std::vector<std::pair<std::string, Tensor>> read_params(std::ifstream& in,
                                                        const nlohmann::json& manifest,
                                                        const std::string& path,
                                                        uint64_t& digest) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& e : manifest) {
        std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
        if (!in) throw IoError("checkpoint: truncated parameter data in " + path);
        digest = [&] {
            uint64_t h = digest;
            const char* bytes = reinterpret_cast<const char*>(t.data());
            for (size_t i = 0; i < sizeof(double) * static_cast<size_t>(t.numel()); ++i) {
                h ^= static_cast<unsigned char>(bytes[i]);
                h *= 1099511628211ull;
            }
            return h;
        }();
        out.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    return out;
}

void copy_into(std::vector<std::pair<std::string, ad::Var>>& live,
               const std::vector<std::pair<std::string, Tensor>>& saved,
               const std::string& what) {
    if (live.size() != saved.size())
        throw IoError("checkpoint: " + what + " parameter count mismatch");
    for (size_t i = 0; i < live.size(); ++i) {
        if (live[i].first != saved[i].first)
            throw IoError("checkpoint: " + what + " parameter order mismatch at '" +
                          saved[i].first + "'");
        Tensor& dst = live[i].second.value();
        const Tensor& src = saved[i].second;
        if (!dst.same_shape(src))
            throw IoError("checkpoint: shape mismatch for '" + saved[i].first + "'");
        std::memcpy(dst.data(), src.data(),
                    sizeof(double) * static_cast<size_t>(src.numel()));
    }
}

} // namespace

Checkpoint snapshot(const Generator& g, const Discriminator* d, uint64_t seed, int64_t step,
                    const std::string& variant) {
    Checkpoint ck;
    ck.gen_config = g.config();
    ck.seed = seed;
    ck.step = step;
    ck.variant = variant;
    for (const auto& [name, var] : g.params()) ck.gen_params.emplace_back(name, var.value());
    if (d != nullptr) {
        ck.has_discriminator = true;
        ck.disc_config = d->config();
        for (const auto& [name, var] : d->params())
            ck.disc_params.emplace_back(name, var.value());
    }
    return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    nlohmann::json meta;
    meta["generator_config"] = nlohmann::json::parse(config_to_json(ck.gen_config));
    if (ck.has_discriminator) {
        meta["discriminator"] = {{"widths", ck.disc_config.widths},
                                 {"kernel", ck.disc_config.kernel}};
    } else {
        meta["discriminator"] = nullptr;
    }
    meta["seed"] = ck.seed;
    meta["step"] = ck.step;
    meta["variant"] = ck.variant;
    meta["gen_params"] = manifest_of(ck.gen_params);
    meta["disc_params"] = manifest_of(ck.disc_params);
    const std::string meta_text = meta.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    write_pod(out, static_cast<uint64_t>(meta_text.size()));
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

    uint64_t digest = 1469598103934665603ull;
    auto dump = [&](const std::vector<std::pair<std::string, Tensor>>& params) {
        for (const auto& [name, t] : params) {
            (void)name;
            const char* bytes = reinterpret_cast<const char*>(t.data());
            const size_t n = sizeof(double) * static_cast<size_t>(t.numel());
            out.write(bytes, static_cast<std::streamsize>(n));
            for (size_t i = 0; i < n; ++i) {
                digest ^= static_cast<unsigned char>(bytes[i]);
                digest *= 1099511628211ull;
            }
        }
    };
    dump(ck.gen_params);
    dump(ck.disc_params);
    write_pod(out, digest);
    if (!out) throw IoError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    uint32_t version = 0;
    read_pod(in, version, path);
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version) + " in " +
                      path);
    uint64_t meta_len = 0;
    read_pod(in, meta_len, path);
    std::string meta_text(meta_len, '\0');
    in.read(meta_text.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw IoError("checkpoint: truncated metadata in " + path);

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: corrupt metadata in " + path + ": " + e.what());
    }

    Checkpoint ck;
    try {
        ck.gen_config = config_from_json(meta.at("generator_config").dump());
        if (!meta.at("discriminator").is_null()) {
            ck.has_discriminator = true;
            ck.disc_config.widths =
                meta["discriminator"].at("widths").get<std::vector<int64_t>>();
            ck.disc_config.kernel = meta["discriminator"].at("kernel").get<int>();
        }
        ck.seed = meta.at("seed").get<uint64_t>();
        ck.step = meta.at("step").get<int64_t>();
        ck.variant = meta.at("variant").get<std::string>();
        uint64_t digest = 1469598103934665603ull;
        ck.gen_params = read_params(in, meta.at("gen_params"), path, digest);
        ck.disc_params = read_params(in, meta.at("disc_params"), path, digest);
        uint64_t stored = 0;
        read_pod(in, stored, path);
        if (stored != digest) throw IoError("checkpoint: digest mismatch in " + path);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: malformed metadata in " + path + ": " + e.what());
    }
    return ck;
}

Generator restore_generator(const Checkpoint& ck) {
    Generator g(ck.gen_config, ck.seed);
    copy_into(g.params(), ck.gen_params, "generator");
    return g;
}

Discriminator restore_discriminator(const Checkpoint& ck) {
    if (!ck.has_discriminator)
        throw IoError("checkpoint: no discriminator state in this checkpoint");
    Discriminator d(ck.disc_config, ck.seed);
    copy_into(d.params(), ck.disc_params, "discriminator");
    return d;
}

} // namespace fetnet
