#include "vsdsr/container.hpp"

#include <cstring>
#include <fstream>

#include "vsdsr/errors.hpp"

namespace vsdsr {

namespace {

constexpr char kMagic[8] = {'V', 'S', 'D', 'S', 'R', 'B', 'I', 'N'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

} // namespace

void Container::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IngestionError("cannot open for write: " + path.string());

    os.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(os, kVersion);

    const std::string meta_str = meta.dump();
    write_pod<uint64_t>(os, meta_str.size());
    os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

    write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
        for (size_t d = 0; d < t.ndim(); d++) write_pod<int64_t>(os, t.shape()[d]);
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(real)));
    }
    if (!os) throw IngestionError("short write: " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IngestionError("cannot open: " + path.string());

    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IngestionError("bad magic header: " + path.string());
    uint32_t version = read_pod<uint32_t>(is);
    if (version != kVersion)
        throw IngestionError("unsupported container version " + std::to_string(version) + ": " +
                             path.string());

    Container c;
    uint64_t meta_len = read_pod<uint64_t>(is);
    std::string meta_str(meta_len, '\0');
    is.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    c.meta = nlohmann::json::parse(meta_str, nullptr, false);
    if (c.meta.is_discarded()) throw IngestionError("corrupt metadata JSON: " + path.string());

    uint32_t n_tensors = read_pod<uint32_t>(is);
    for (uint32_t i = 0; i < n_tensors; i++) {
        uint32_t name_len = read_pod<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t ndim = read_pod<uint32_t>(is);
        std::vector<int64_t> shape(ndim);
        for (uint32_t d = 0; d < ndim; d++) shape[d] = read_pod<int64_t>(is);
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(real)));
        if (!is) throw IngestionError("truncated tensor '" + name + "': " + path.string());
        c.tensors.emplace(std::move(name), std::move(t));
    }
    return c;
}

const Tensor& Container::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IngestionError("container missing tensor '" + name + "'");
    return it->second;
}

} // namespace vsdsr
