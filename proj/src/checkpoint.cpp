#include "hupe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hupe {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path)
{
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw std::runtime_error("truncated checkpoint: " + path.string());
    return v;
}

std::string read_string(std::istream& is, uint32_t len, const std::filesystem::path& path)
{
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw std::runtime_error("truncated checkpoint: " + path.string());
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());

    os.write(kCheckpointVersion.data(), static_cast<std::streamsize>(kCheckpointVersion.size()));
    const std::string meta = ckpt.meta.dump();
    write_u32(os, static_cast<uint32_t>(meta.size()));
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));

    const auto& names = ckpt.entries.names();
    const auto& values = ckpt.entries.tensors();
    write_u32(os, static_cast<uint32_t>(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i) {
        write_u32(os, static_cast<uint32_t>(names[i].size()));
        os.write(names[i].data(), static_cast<std::streamsize>(names[i].size()));
        const auto t = values[i].detach().to(torch::kFloat32).contiguous();
        write_u32(os, static_cast<uint32_t>(t.dim()));
        for (int64_t d : t.sizes()) write_i64(os, d);
        os.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());

    std::string version(kCheckpointVersion.size(), '\0');
    is.read(version.data(), static_cast<std::streamsize>(version.size()));
    if (!is || version != kCheckpointVersion) {
        throw std::runtime_error("not a " + std::string(kCheckpointVersion) + " file: " + path.string());
    }

    Checkpoint ckpt;
    const auto meta_len = read_pod<uint32_t>(is, path);
    ckpt.meta = nlohmann::json::parse(read_string(is, meta_len, path));

    const auto count = read_pod<uint32_t>(is, path);
    for (uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<uint32_t>(is, path);
        std::string name = read_string(is, name_len, path);
        const auto ndim = read_pod<uint32_t>(is, path);
        if (ndim > 8) throw std::runtime_error("corrupt checkpoint (ndim) in " + path.string());
        std::vector<int64_t> dims(ndim);
        for (auto& d : dims) {
            d = read_pod<int64_t>(is, path);
            if (d < 0) throw std::runtime_error("corrupt checkpoint (negative dim) in " + path.string());
        }
        auto t = torch::empty(dims, torch::kFloat32);
        is.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!is) throw std::runtime_error("truncated checkpoint payload for '" + name + "': " + path.string());
        ckpt.entries.add(name, t);
    }
    return ckpt;
}

}  // namespace hupe
