#include "snpforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "snpf containers assume a little-endian host");

namespace snpforge {

namespace {

constexpr char kMagic[4] = {'S', 'N', 'P', 'F'};

template <typename T>
void put(std::string& buf, T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf.append(p, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& off) {
    if (off + sizeof(T) > buf.size()) throw std::runtime_error("snpf: truncated file");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

} // namespace

SnpfTensor SnpfTensor::from(const std::string& name, const Tensorf& t) {
    SnpfTensor e;
    e.name = name;
    e.dtype = SnpfDType::f32;
    e.shape = t.shape();
    e.f32 = t.data();
    return e;
}

SnpfTensor SnpfTensor::from(const std::string& name, const Tensord& t) {
    SnpfTensor e;
    e.name = name;
    e.dtype = SnpfDType::f64;
    e.shape = t.shape();
    e.f64 = t.data();
    return e;
}

SnpfTensor SnpfTensor::from_scalar(const std::string& name, double v) {
    SnpfTensor e;
    e.name = name;
    e.dtype = SnpfDType::f64;
    e.shape = {};
    e.f64 = {v};
    return e;
}

Tensorf SnpfTensor::to_f32() const {
    if (dtype == SnpfDType::f32) return Tensorf::from_vector(shape, f32);
    std::vector<float> v(f64.begin(), f64.end());
    return Tensorf::from_vector(shape, std::move(v));
}

Tensord SnpfTensor::to_f64() const {
    if (dtype == SnpfDType::f64) return Tensord::from_vector(shape, f64);
    std::vector<double> v(f32.begin(), f32.end());
    return Tensord::from_vector(shape, std::move(v));
}

double SnpfTensor::scalar() const {
    if (numel() != 1) throw std::runtime_error("snpf: tensor '" + name + "' is not scalar");
    return dtype == SnpfDType::f64 ? f64[0] : static_cast<double>(f32[0]);
}

void SnpfFile::add(SnpfTensor t) {
    if (has(t.name)) throw std::runtime_error("snpf: duplicate tensor '" + t.name + "'");
    const auto n = static_cast<size_t>(t.numel());
    const size_t held = t.dtype == SnpfDType::f32 ? t.f32.size() : t.f64.size();
    if (held != n)
        throw std::runtime_error("snpf: tensor '" + t.name + "' shape " + shape_str(t.shape) +
                                 " does not match its buffer");
    tensors_.push_back(std::move(t));
}

bool SnpfFile::has(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return true;
    return false;
}

const SnpfTensor& SnpfFile::get(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return t;
    throw std::runtime_error("snpf: missing tensor '" + name + "'");
}

void SnpfFile::write(const std::string& path) const {
    std::string data;
    std::string manifest;
    for (const auto& t : tensors_) {
        const uint64_t offset = data.size();
        if (t.dtype == SnpfDType::f32)
            data.append(reinterpret_cast<const char*>(t.f32.data()), t.f32.size() * sizeof(float));
        else
            data.append(reinterpret_cast<const char*>(t.f64.data()), t.f64.size() * sizeof(double));
        const uint64_t nbytes = data.size() - offset;
        put<uint16_t>(manifest, static_cast<uint16_t>(t.name.size()));
        manifest.append(t.name);
        put<uint8_t>(manifest, static_cast<uint8_t>(t.dtype));
        put<uint8_t>(manifest, static_cast<uint8_t>(t.shape.size()));
        for (const auto d : t.shape) put<int64_t>(manifest, d);
        put<uint64_t>(manifest, offset);
        put<uint64_t>(manifest, nbytes);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("snpf: cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    std::string head;
    put<uint16_t>(head, kVersion);
    put<uint32_t>(head, static_cast<uint32_t>(tensors_.size()));
    os.write(head.data(), static_cast<std::streamsize>(head.size()));
    os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    std::string dsize;
    put<uint64_t>(dsize, data.size());
    os.write(dsize.data(), static_cast<std::streamsize>(dsize.size()));
    os.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!os) throw std::runtime_error("snpf: write failed for '" + path + "'");
}

SnpfFile SnpfFile::read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("snpf: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    size_t off = 0;
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw std::runtime_error("snpf: bad magic in '" + path + "'");
    off = 4;
    const auto version = take<uint16_t>(buf, off);
    if (version != kVersion)
        throw std::runtime_error("snpf: unsupported version " + std::to_string(version));
    const auto count = take<uint32_t>(buf, off);
    struct Entry {
        SnpfTensor t;
        uint64_t offset, nbytes;
    };
    std::vector<Entry> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Entry e;
        const auto name_len = take<uint16_t>(buf, off);
        if (off + name_len > buf.size()) throw std::runtime_error("snpf: truncated file");
        e.t.name.assign(buf.data() + off, name_len);
        off += name_len;
        const auto dtype = take<uint8_t>(buf, off);
        if (dtype > 1) throw std::runtime_error("snpf: unknown dtype for '" + e.t.name + "'");
        e.t.dtype = static_cast<SnpfDType>(dtype);
        const auto ndim = take<uint8_t>(buf, off);
        e.t.shape.resize(ndim);
        for (auto& d : e.t.shape) d = take<int64_t>(buf, off);
        e.offset = take<uint64_t>(buf, off);
        e.nbytes = take<uint64_t>(buf, off);
        entries.push_back(std::move(e));
    }
    const auto data_size = take<uint64_t>(buf, off);
    if (off + data_size > buf.size()) throw std::runtime_error("snpf: truncated file");
    const char* data = buf.data() + off;
    SnpfFile f;
    for (auto& e : entries) {
        const auto n = static_cast<size_t>(shape_numel(e.t.shape));
        const size_t want = n * (e.t.dtype == SnpfDType::f32 ? sizeof(float) : sizeof(double));
        if (e.nbytes != want || e.offset + e.nbytes > data_size)
            throw std::runtime_error("snpf: corrupt manifest entry '" + e.t.name + "'");
        if (e.t.dtype == SnpfDType::f32) {
            e.t.f32.resize(n);
            std::memcpy(e.t.f32.data(), data + e.offset, e.nbytes);
        } else {
            e.t.f64.resize(n);
            std::memcpy(e.t.f64.data(), data + e.offset, e.nbytes);
        }
        f.add(std::move(e.t));
    }
    return f;
}

} // namespace snpforge
