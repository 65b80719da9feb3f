#ifndef SNPFORGE_GENODATA_HPP
#define SNPFORGE_GENODATA_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snpforge/tensor.hpp"

namespace snpforge {

struct Variant {
    uint8_t chrom = 1;
    uint64_t pos = 0;
    char ref = 'A';
    char alt = 'G';
};

struct PhenotypeVector {
    std::vector<uint8_t> labels; // {0,1}
    std::string trait = "trait";

    int64_t n_cases() const;
    int64_t n_controls() const { return static_cast<int64_t>(labels.size()) - n_cases(); }
};

// Immutable n x L dosage matrix, 2 bits per genotype (values 0/1/2; 3 is
// reserved and rejected). Two per-row bitplanes (bit0 and bit1 of each
// dosage) are kept alongside so Hamming scans reduce to XOR + popcount.
class GenotypeMatrix {
  public:
    GenotypeMatrix() = default;
    GenotypeMatrix(int64_t n, int64_t l, const std::vector<uint8_t>& dosages_row_major,
                   std::vector<Variant> variants, std::vector<std::string> sample_ids = {},
                   std::vector<std::string> family_ids = {}, std::vector<std::string> snp_ids = {});
    // Construct from an already packed buffer (validates reserved values).
    static GenotypeMatrix from_packed(int64_t n, int64_t l, std::vector<uint8_t> packed,
                                      std::vector<Variant> variants,
                                      std::vector<std::string> sample_ids,
                                      std::vector<std::string> family_ids,
                                      std::vector<std::string> snp_ids);

    int64_t n() const { return n_; }
    int64_t l() const { return l_; }
    uint8_t dosage(int64_t i, int64_t j) const {
        const uint8_t byte = packed_[static_cast<size_t>(i * bytes_per_row_ + (j >> 2))];
        return (byte >> ((j & 3) * 2)) & 3;
    }
    std::vector<uint8_t> row(int64_t i) const;
    std::vector<uint8_t> column(int64_t j) const;

    int64_t words_per_row() const { return words_per_row_; }
    const uint64_t* plane_a(int64_t i) const { return plane_a_.data() + i * words_per_row_; }
    const uint64_t* plane_b(int64_t i) const { return plane_b_.data() + i * words_per_row_; }
    // Dosage mismatch count between row i and row j of another matrix.
    int64_t mismatches(int64_t i, const GenotypeMatrix& other, int64_t j) const;

    const std::vector<uint8_t>& packed() const { return packed_; }
    int64_t bytes_per_row() const { return bytes_per_row_; }
    const std::vector<Variant>& variants() const { return variants_; }
    const std::vector<std::string>& sample_ids() const { return sample_ids_; }
    const std::vector<std::string>& family_ids() const { return family_ids_; }
    const std::vector<std::string>& snp_ids() const { return snp_ids_; }

    GenotypeMatrix subset_rows(std::span<const int64_t> rows) const;
    GenotypeMatrix subset_cols(std::span<const int64_t> cols) const;

    // FNV-1a over the packed dosage block.
    uint64_t checksum() const;

  private:
    int64_t n_ = 0, l_ = 0;
    int64_t bytes_per_row_ = 0, words_per_row_ = 0;
    std::vector<uint8_t> packed_;
    std::vector<uint64_t> plane_a_, plane_b_;
    std::vector<Variant> variants_;
    std::vector<std::string> sample_ids_, family_ids_, snp_ids_;

    void build_planes();
    void validate() const;
};

// One-hot channels over {0,1,2}: [batch, 3, L].
template <typename T>
Tensor<T> one_hot_encode(const GenotypeMatrix& g, std::span<const int64_t> rows);
template <typename T>
Tensor<T> one_hot_encode(const GenotypeMatrix& g); // all rows

// Per-position argmax over the channel axis of [batch, 3, L] logits; ties
// break toward the lowest class. Throws on NaN.
template <typename T>
std::vector<uint8_t> decode_argmax(const Tensor<T>& logits);

std::vector<double> maf(const GenotypeMatrix& g);

enum class SplitSet : uint8_t { train = 0, val = 1, test = 2 };

struct SplitAssignment {
    std::vector<SplitSet> set; // per sample
    std::array<double, 3> fractions;
    std::vector<std::string> warnings;

    std::vector<int64_t> indices(SplitSet s) const;
};

// Family groups are assigned atomically; greedy assignment balances both the
// per-set sample counts and case counts against the target fractions.
SplitAssignment grouped_stratified_split(const GenotypeMatrix& g, const PhenotypeVector& y,
                                         std::array<double, 3> fractions, uint64_t seed);

// GPACK container + TSV sidecars (`<stem>.gpack`, `<stem>.samples.tsv`,
// `<stem>.variants.tsv`). See docs/formats.md.
struct Cohort {
    GenotypeMatrix genotypes;
    std::optional<PhenotypeVector> phenotype;
};

void write_gpack(const std::string& stem, const GenotypeMatrix& g,
                 const std::optional<PhenotypeVector>& phenotype = {});
Cohort read_gpack(const std::string& stem);

} // namespace snpforge

#endif
