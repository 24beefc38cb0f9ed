#include "ssmtl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ssmtl {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'M', 'T', 'L', 'C', 'K', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw CheckpointError("checkpoint truncated while reading " + what);
    return v;
}

}  // namespace

const NamedArray& CheckpointFile::array(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return a;
    throw CheckpointError("checkpoint has no array '" + name + "'");
}

bool CheckpointFile::has_array(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return true;
    return false;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt) {
    nlohmann::json meta = ckpt.meta;
    auto table = nlohmann::json::array();
    for (const auto& a : ckpt.arrays) {
        if (ad::shape_numel(a.shape) != a.data.size())
            throw CheckpointError("array '" + a.name + "' has inconsistent shape");
        table.push_back({{"name", a.name}, {"shape", a.shape}});
    }
    meta["arrays"] = table;
    const std::string header = meta.dump();

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw CheckpointError("cannot open " + tmp + " for writing");
        os.write(kMagic, sizeof kMagic);
        put<std::uint32_t>(os, kCheckpointVersion);
        put<std::uint64_t>(os, header.size());
        os.write(header.data(), static_cast<std::streamsize>(header.size()));
        for (const auto& a : ckpt.arrays)
            os.write(reinterpret_cast<const char*>(a.data.data()),
                     static_cast<std::streamsize>(a.data.size() * sizeof(double)));
        if (!os) throw CheckpointError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
    char magic[sizeof kMagic];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw CheckpointError(path.string() + " is not a checkpoint file");
    const auto version = get<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto len = get<std::uint64_t>(is, "header length");
    std::string header(len, '\0');
    is.read(header.data(), static_cast<std::streamsize>(len));
    if (!is) throw CheckpointError("checkpoint truncated in header");

    CheckpointFile ckpt;
    ckpt.meta = nlohmann::json::parse(header);
    for (const auto& entry : ckpt.meta.at("arrays")) {
        NamedArray a;
        a.name = entry.at("name").get<std::string>();
        a.shape = entry.at("shape").get<ad::Shape>();
        a.data.resize(ad::shape_numel(a.shape));
        is.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(double)));
        if (!is) throw CheckpointError("checkpoint truncated in array '" + a.name + "'");
        ckpt.arrays.push_back(std::move(a));
    }
    ckpt.meta.erase("arrays");
    return ckpt;
}

}  // namespace ssmtl
