#ifndef SNPFORGE_CHECKPOINT_HPP
#define SNPFORGE_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "snpforge/tensor.hpp"

namespace snpforge {

enum class SnpfDType : uint8_t { f32 = 0, f64 = 1 };

struct SnpfTensor {
    std::string name;
    SnpfDType dtype = SnpfDType::f32;
    Shape shape;
    std::vector<float> f32;
    std::vector<double> f64;

    static SnpfTensor from(const std::string& name, const Tensorf& t);
    static SnpfTensor from(const std::string& name, const Tensord& t);
    static SnpfTensor from_scalar(const std::string& name, double v);

    Tensorf to_f32() const;
    Tensord to_f64() const;
    double scalar() const;
    int64_t numel() const { return shape_numel(shape); }
};

// Single-file tensor container: magic "SNPF", u16 version, manifest of
// (name, dtype, shape, byte offset, byte length), then one flat
// little-endian buffer per tensor. See docs/formats.md for the exact layout.
class SnpfFile {
  public:
    void add(SnpfTensor t);
    void add_scalar(const std::string& name, double v) { add(SnpfTensor::from_scalar(name, v)); }
    bool has(const std::string& name) const;
    const SnpfTensor& get(const std::string& name) const;
    double scalar(const std::string& name) const { return get(name).scalar(); }
    const std::vector<SnpfTensor>& tensors() const { return tensors_; }

    void write(const std::string& path) const;
    static SnpfFile read(const std::string& path);

    static constexpr uint16_t kVersion = 1;

  private:
    std::vector<SnpfTensor> tensors_;
};

} // namespace snpforge

#endif
