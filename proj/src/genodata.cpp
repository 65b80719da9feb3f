#include "snpforge/genodata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace snpforge {

int64_t PhenotypeVector::n_cases() const {
    int64_t c = 0;
    for (const auto v : labels) c += v;
    return c;
}

GenotypeMatrix::GenotypeMatrix(int64_t n, int64_t l, const std::vector<uint8_t>& dosages,
                               std::vector<Variant> variants, std::vector<std::string> sample_ids,
                               std::vector<std::string> family_ids,
                               std::vector<std::string> snp_ids)
    : n_(n), l_(l), variants_(std::move(variants)), sample_ids_(std::move(sample_ids)),
      family_ids_(std::move(family_ids)), snp_ids_(std::move(snp_ids)) {
    if (static_cast<int64_t>(dosages.size()) != n * l)
        throw std::invalid_argument("genotype matrix: " + std::to_string(dosages.size()) +
                                    " dosages for " + std::to_string(n) + "x" + std::to_string(l));
    bytes_per_row_ = (l_ + 3) / 4;
    packed_.assign(static_cast<size_t>(n_ * bytes_per_row_), 0);
    for (int64_t i = 0; i < n_; ++i)
        for (int64_t j = 0; j < l_; ++j) {
            const uint8_t d = dosages[static_cast<size_t>(i * l_ + j)];
            if (d > 2)
                throw std::invalid_argument("genotype matrix: dosage " + std::to_string(d) +
                                            " at (" + std::to_string(i) + "," + std::to_string(j) +
                                            ") outside {0,1,2}");
            packed_[static_cast<size_t>(i * bytes_per_row_ + (j >> 2))] |=
                static_cast<uint8_t>(d << ((j & 3) * 2));
        }
    validate();
    build_planes();
}

GenotypeMatrix GenotypeMatrix::from_packed(int64_t n, int64_t l, std::vector<uint8_t> packed,
                                           std::vector<Variant> variants,
                                           std::vector<std::string> sample_ids,
                                           std::vector<std::string> family_ids,
                                           std::vector<std::string> snp_ids) {
    GenotypeMatrix g;
    g.n_ = n;
    g.l_ = l;
    g.bytes_per_row_ = (l + 3) / 4;
    if (static_cast<int64_t>(packed.size()) != n * g.bytes_per_row_)
        throw std::invalid_argument("genotype matrix: packed buffer size mismatch");
    g.packed_ = std::move(packed);
    g.variants_ = std::move(variants);
    g.sample_ids_ = std::move(sample_ids);
    g.family_ids_ = std::move(family_ids);
    g.snp_ids_ = std::move(snp_ids);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < l; ++j)
            if (g.dosage(i, j) == 3)
                throw std::runtime_error("gpack: reserved dosage value 3 at sample " +
                                         std::to_string(i) + " snp " + std::to_string(j));
    g.validate();
    g.build_planes();
    return g;
}

void GenotypeMatrix::validate() const {
    if (static_cast<int64_t>(variants_.size()) != l_)
        throw std::invalid_argument("genotype matrix: " + std::to_string(variants_.size()) +
                                    " variants for L=" + std::to_string(l_));
    if (!sample_ids_.empty() && static_cast<int64_t>(sample_ids_.size()) != n_)
        throw std::invalid_argument("genotype matrix: sample id count mismatch");
    if (!family_ids_.empty() && static_cast<int64_t>(family_ids_.size()) != n_)
        throw std::invalid_argument("genotype matrix: family id count mismatch");
    if (!snp_ids_.empty() && static_cast<int64_t>(snp_ids_.size()) != l_)
        throw std::invalid_argument("genotype matrix: snp id count mismatch");
    for (size_t j = 1; j < variants_.size(); ++j) {
        const auto& a = variants_[j - 1];
        const auto& b = variants_[j];
        if (a.chrom > b.chrom || (a.chrom == b.chrom && a.pos >= b.pos))
            throw std::invalid_argument(
                "genotype matrix: variants must be sorted by (chrom, pos) with strictly "
                "increasing positions, violated at index " +
                std::to_string(j));
    }
}

void GenotypeMatrix::build_planes() {
    words_per_row_ = (l_ + 63) / 64;
    plane_a_.assign(static_cast<size_t>(n_ * words_per_row_), 0);
    plane_b_.assign(static_cast<size_t>(n_ * words_per_row_), 0);
    for (int64_t i = 0; i < n_; ++i) {
        auto* pa = plane_a_.data() + i * words_per_row_;
        auto* pb = plane_b_.data() + i * words_per_row_;
        for (int64_t j = 0; j < l_; ++j) {
            const uint8_t d = dosage(i, j);
            if (d & 1) pa[j >> 6] |= 1ull << (j & 63);
            if (d & 2) pb[j >> 6] |= 1ull << (j & 63);
        }
    }
}

std::vector<uint8_t> GenotypeMatrix::row(int64_t i) const {
    std::vector<uint8_t> out(static_cast<size_t>(l_));
    for (int64_t j = 0; j < l_; ++j) out[static_cast<size_t>(j)] = dosage(i, j);
    return out;
}

std::vector<uint8_t> GenotypeMatrix::column(int64_t j) const {
    std::vector<uint8_t> out(static_cast<size_t>(n_));
    for (int64_t i = 0; i < n_; ++i) out[static_cast<size_t>(i)] = dosage(i, j);
    return out;
}

int64_t GenotypeMatrix::mismatches(int64_t i, const GenotypeMatrix& other, int64_t j) const {
    if (l_ != other.l_)
        throw std::invalid_argument("mismatches: panels of length " + std::to_string(l_) + " vs " +
                                    std::to_string(other.l_));
    const auto* a1 = plane_a(i);
    const auto* b1 = plane_b(i);
    const auto* a2 = other.plane_a(j);
    const auto* b2 = other.plane_b(j);
    int64_t count = 0;
    for (int64_t w = 0; w < words_per_row_; ++w)
        count += std::popcount((a1[w] ^ a2[w]) | (b1[w] ^ b2[w]));
    return count;
}

GenotypeMatrix GenotypeMatrix::subset_rows(std::span<const int64_t> rows) const {
    GenotypeMatrix g;
    g.n_ = static_cast<int64_t>(rows.size());
    g.l_ = l_;
    g.bytes_per_row_ = bytes_per_row_;
    g.packed_.resize(static_cast<size_t>(g.n_ * bytes_per_row_));
    for (size_t r = 0; r < rows.size(); ++r) {
        const int64_t src = rows[r];
        if (src < 0 || src >= n_) throw std::out_of_range("subset_rows: index out of range");
        std::memcpy(g.packed_.data() + static_cast<int64_t>(r) * bytes_per_row_,
                    packed_.data() + src * bytes_per_row_, static_cast<size_t>(bytes_per_row_));
    }
    g.variants_ = variants_;
    g.snp_ids_ = snp_ids_;
    if (!sample_ids_.empty()) {
        g.sample_ids_.reserve(rows.size());
        for (const auto r : rows) g.sample_ids_.push_back(sample_ids_[static_cast<size_t>(r)]);
    }
    if (!family_ids_.empty()) {
        g.family_ids_.reserve(rows.size());
        for (const auto r : rows) g.family_ids_.push_back(family_ids_[static_cast<size_t>(r)]);
    }
    g.build_planes();
    return g;
}

GenotypeMatrix GenotypeMatrix::subset_cols(std::span<const int64_t> cols) const {
    const auto lc = static_cast<int64_t>(cols.size());
    std::vector<uint8_t> dosages(static_cast<size_t>(n_ * lc));
    std::vector<Variant> vars;
    std::vector<std::string> ids;
    vars.reserve(cols.size());
    for (const auto c : cols) {
        if (c < 0 || c >= l_) throw std::out_of_range("subset_cols: index out of range");
        vars.push_back(variants_[static_cast<size_t>(c)]);
        if (!snp_ids_.empty()) ids.push_back(snp_ids_[static_cast<size_t>(c)]);
    }
    for (int64_t i = 0; i < n_; ++i)
        for (int64_t k = 0; k < lc; ++k)
            dosages[static_cast<size_t>(i * lc + k)] = dosage(i, cols[static_cast<size_t>(k)]);
    return GenotypeMatrix(n_, lc, dosages, std::move(vars), sample_ids_, family_ids_,
                          std::move(ids));
}

uint64_t GenotypeMatrix::checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (b * 8)) & 0xff;
            h *= 0x100000001b3ull;
        }
    };
    mix(static_cast<uint64_t>(n_));
    mix(static_cast<uint64_t>(l_));
    for (const auto byte : packed_) {
        h ^= byte;
        h *= 0x100000001b3ull;
    }
    return h;
}

// ---- encoding --------------------------------------------------------------

template <typename T>
Tensor<T> one_hot_encode(const GenotypeMatrix& g, std::span<const int64_t> rows) {
    const auto B = static_cast<int64_t>(rows.size());
    const int64_t L = g.l();
    Tensor<T> out = Tensor<T>::zeros({B, 3, L});
    auto* po = out.data().data();
    for (int64_t b = 0; b < B; ++b) {
        const int64_t i = rows[static_cast<size_t>(b)];
        for (int64_t j = 0; j < L; ++j)
            po[(b * 3 + g.dosage(i, j)) * L + j] = T(1);
    }
    return out;
}

template <typename T>
Tensor<T> one_hot_encode(const GenotypeMatrix& g) {
    std::vector<int64_t> rows(static_cast<size_t>(g.n()));
    for (int64_t i = 0; i < g.n(); ++i) rows[static_cast<size_t>(i)] = i;
    return one_hot_encode<T>(g, rows);
}

template <typename T>
std::vector<uint8_t> decode_argmax(const Tensor<T>& logits) {
    if (logits.ndim() != 3 || logits.dim(1) != 3)
        throw std::invalid_argument("decode_argmax: expected [B,3,L] logits, got " +
                                    shape_str(logits.shape()));
    const int64_t B = logits.dim(0), L = logits.dim(2);
    const auto* p = logits.data().data();
    std::vector<uint8_t> out(static_cast<size_t>(B * L));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < L; ++j) {
            uint8_t best = 0;
            T best_v = p[(b * 3 + 0) * L + j];
            if (std::isnan(static_cast<double>(best_v)))
                throw std::runtime_error("decode_argmax: NaN logit");
            for (uint8_t c = 1; c < 3; ++c) {
                const T v = p[(b * 3 + c) * L + j];
                if (std::isnan(static_cast<double>(v)))
                    throw std::runtime_error("decode_argmax: NaN logit");
                if (v > best_v) { // ties keep the lowest class
                    best_v = v;
                    best = c;
                }
            }
            out[static_cast<size_t>(b * L + j)] = best;
        }
    return out;
}

std::vector<double> maf(const GenotypeMatrix& g) {
    std::vector<double> out(static_cast<size_t>(g.l()));
    for (int64_t j = 0; j < g.l(); ++j) {
        int64_t sum = 0;
        for (int64_t i = 0; i < g.n(); ++i) sum += g.dosage(i, j);
        const double p = static_cast<double>(sum) / (2.0 * static_cast<double>(g.n()));
        out[static_cast<size_t>(j)] = std::min(p, 1.0 - p);
    }
    return out;
}

// ---- grouped stratified split ------------------------------------------------

std::vector<int64_t> SplitAssignment::indices(SplitSet s) const {
    std::vector<int64_t> out;
    for (size_t i = 0; i < set.size(); ++i)
        if (set[i] == s) out.push_back(static_cast<int64_t>(i));
    return out;
}

SplitAssignment grouped_stratified_split(const GenotypeMatrix& g, const PhenotypeVector& y,
                                         std::array<double, 3> fractions, uint64_t seed) {
    double fsum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(fsum - 1.0) > 1e-9)
        throw std::invalid_argument("split: fractions must sum to 1");
    if (static_cast<int64_t>(y.labels.size()) != g.n())
        throw std::invalid_argument("split: phenotype length mismatch");

    struct Group {
        std::vector<int64_t> members;
        int64_t cases = 0;
    };
    std::map<std::string, size_t> by_family;
    std::vector<Group> groups;
    const auto& fams = g.family_ids();
    for (int64_t i = 0; i < g.n(); ++i) {
        const std::string fam = fams.empty() ? "" : fams[static_cast<size_t>(i)];
        size_t gi;
        if (fam.empty() || fam == ".") {
            gi = groups.size();
            groups.emplace_back();
        } else {
            auto it = by_family.find(fam);
            if (it == by_family.end()) {
                gi = groups.size();
                by_family.emplace(fam, gi);
                groups.emplace_back();
            } else {
                gi = it->second;
            }
        }
        groups[gi].members.push_back(i);
        groups[gi].cases += y.labels[static_cast<size_t>(i)];
    }

    std::vector<size_t> order(groups.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "grouped_split"));
    rng.shuffle(order.begin(), order.end());
    // Large groups first; ties stay in shuffled order.
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return groups[a].members.size() > groups[b].members.size();
    });

    const auto n = static_cast<double>(g.n());
    const auto total_cases = static_cast<double>(y.n_cases());
    const double total_controls = n - total_cases;
    // Per-class targets; each group goes to the set with the largest relative
    // remaining deficit for its composition.
    std::array<double, 3> target_case{}, target_ctrl{};
    for (int s = 0; s < 3; ++s) {
        target_case[static_cast<size_t>(s)] = fractions[static_cast<size_t>(s)] * total_cases;
        target_ctrl[static_cast<size_t>(s)] = fractions[static_cast<size_t>(s)] * total_controls;
    }

    SplitAssignment out;
    out.set.assign(static_cast<size_t>(g.n()), SplitSet::train);
    out.fractions = fractions;
    std::array<double, 3> acase{}, actrl{};
    for (const auto gi : order) {
        const auto& grp = groups[gi];
        const auto gc = static_cast<double>(grp.cases);
        const double gn = static_cast<double>(grp.members.size());
        const double gctrl = gn - gc;
        int best = -1;
        double best_score = 0;
        for (int s = 0; s < 3; ++s) {
            const auto su = static_cast<size_t>(s);
            if (fractions[su] <= 0) continue; // zero-fraction sets stay empty
            double score = 0;
            if (gc > 0 && target_case[su] > 0)
                score += gc * (target_case[su] - acase[su]) / target_case[su];
            if (gctrl > 0 && target_ctrl[su] > 0)
                score += gctrl * (target_ctrl[su] - actrl[su]) / target_ctrl[su];
            if (best < 0 || score > best_score) {
                best = s;
                best_score = score;
            }
        }
        const auto bu = static_cast<size_t>(best);
        if (gn > fractions[bu] * n)
            out.warnings.push_back("group of size " + std::to_string(grp.members.size()) +
                                   " exceeds target capacity of its assigned set");
        acase[bu] += gc;
        actrl[bu] += gctrl;
        for (const auto m : grp.members) out.set[static_cast<size_t>(m)] = static_cast<SplitSet>(best);
    }
    return out;
}

// ---- GPACK I/O -------------------------------------------------------------------

namespace {

constexpr char kGpackMagic[4] = {'G', 'P', 'K', '1'};

std::string strip_gpack_ext(const std::string& path) {
    const std::string ext = ".gpack";
    if (path.size() > ext.size() && path.substr(path.size() - ext.size()) == ext)
        return path.substr(0, path.size() - ext.size());
    return path;
}

std::vector<std::string> split_tsv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : line) {
        if (c == '\t') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

void write_gpack(const std::string& stem_or_path, const GenotypeMatrix& g,
                 const std::optional<PhenotypeVector>& phenotype) {
    const std::string stem = strip_gpack_ext(stem_or_path);
    if (phenotype && static_cast<int64_t>(phenotype->labels.size()) != g.n())
        throw std::invalid_argument("write_gpack: phenotype length mismatch");
    {
        std::ofstream os(stem + ".gpack", std::ios::binary);
        if (!os) throw std::runtime_error("gpack: cannot open '" + stem + ".gpack' for writing");
        os.write(kGpackMagic, 4);
        const auto n32 = static_cast<uint32_t>(g.n());
        const auto l32 = static_cast<uint32_t>(g.l());
        os.write(reinterpret_cast<const char*>(&n32), 4);
        os.write(reinterpret_cast<const char*>(&l32), 4);
        const uint8_t flags = phenotype ? 1 : 0;
        os.write(reinterpret_cast<const char*>(&flags), 1);
        for (const auto& v : g.variants()) {
            os.write(reinterpret_cast<const char*>(&v.chrom), 1);
            os.write(reinterpret_cast<const char*>(&v.pos), 8);
            os.write(&v.ref, 1);
            os.write(&v.alt, 1);
        }
        os.write(reinterpret_cast<const char*>(g.packed().data()),
                 static_cast<std::streamsize>(g.packed().size()));
        if (!os) throw std::runtime_error("gpack: write failed for '" + stem + ".gpack'");
    }
    {
        std::ofstream os(stem + ".samples.tsv");
        if (!os) throw std::runtime_error("gpack: cannot open samples sidecar for writing");
        if (phenotype) os << "#trait=" << phenotype->trait << "\n";
        os << "sample_id\tfamily_id\tlabel\n";
        for (int64_t i = 0; i < g.n(); ++i) {
            const auto iu = static_cast<size_t>(i);
            const std::string sid =
                g.sample_ids().empty() ? "ind" + std::to_string(i) : g.sample_ids()[iu];
            const std::string fam = g.family_ids().empty() ? "." : g.family_ids()[iu];
            os << sid << "\t" << (fam.empty() ? "." : fam) << "\t";
            if (phenotype)
                os << static_cast<int>(phenotype->labels[iu]);
            else
                os << "NA";
            os << "\n";
        }
    }
    {
        std::ofstream os(stem + ".variants.tsv");
        if (!os) throw std::runtime_error("gpack: cannot open variants sidecar for writing");
        os << "snp_id\tchrom\tpos\tref\talt\n";
        for (int64_t j = 0; j < g.l(); ++j) {
            const auto ju = static_cast<size_t>(j);
            const std::string id =
                g.snp_ids().empty() ? "snp" + std::to_string(j) : g.snp_ids()[ju];
            const auto& v = g.variants()[ju];
            os << id << "\t" << static_cast<int>(v.chrom) << "\t" << v.pos << "\t" << v.ref << "\t"
               << v.alt << "\n";
        }
    }
}

Cohort read_gpack(const std::string& stem_or_path) {
    const std::string stem = strip_gpack_ext(stem_or_path);
    std::ifstream is(stem + ".gpack", std::ios::binary);
    if (!is) throw std::runtime_error("gpack: cannot open '" + stem + ".gpack'");
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 4 || std::memcmp(buf.data(), kGpackMagic, 3) != 0)
        throw std::runtime_error("gpack: bad magic in '" + stem + ".gpack'");
    if (buf[3] != kGpackMagic[3])
        throw std::runtime_error("gpack: version mismatch (got '" + std::string(1, buf[3]) +
                                 "', expected '1')");
    if (buf.size() < 13) throw std::runtime_error("gpack: truncated header");
    uint32_t n32, l32;
    std::memcpy(&n32, buf.data() + 4, 4);
    std::memcpy(&l32, buf.data() + 8, 4);
    const uint8_t flags = static_cast<uint8_t>(buf[12]);
    if (flags > 1) throw std::runtime_error("gpack: unknown flags " + std::to_string(flags));
    const auto n = static_cast<int64_t>(n32);
    const auto l = static_cast<int64_t>(l32);
    const int64_t bytes_per_row = (l + 3) / 4;
    const size_t expected = 13 + static_cast<size_t>(l) * 11 + static_cast<size_t>(n * bytes_per_row);
    if (buf.size() < expected)
        throw std::runtime_error("gpack: file shorter than header-declared size (" +
                                 std::to_string(buf.size()) + " < " + std::to_string(expected) +
                                 " bytes)");
    if (buf.size() > expected)
        throw std::runtime_error("gpack: trailing bytes after declared payload");
    std::vector<Variant> variants(static_cast<size_t>(l));
    size_t off = 13;
    for (auto& v : variants) {
        v.chrom = static_cast<uint8_t>(buf[off]);
        std::memcpy(&v.pos, buf.data() + off + 1, 8);
        v.ref = buf[off + 9];
        v.alt = buf[off + 10];
        off += 11;
    }
    std::vector<uint8_t> packed(buf.begin() + static_cast<std::ptrdiff_t>(off), buf.end());

    // Sidecars.
    std::vector<std::string> sample_ids, family_ids, snp_ids;
    std::vector<uint8_t> labels;
    std::string trait = "trait";
    bool has_labels = true;
    {
        std::ifstream ss(stem + ".samples.tsv");
        if (ss) {
            std::string line;
            bool header_seen = false;
            while (std::getline(ss, line)) {
                if (line.empty()) continue;
                if (line[0] == '#') {
                    if (line.rfind("#trait=", 0) == 0) trait = line.substr(7);
                    continue;
                }
                if (!header_seen) {
                    header_seen = true;
                    continue;
                }
                const auto cols = split_tsv_line(line);
                if (cols.size() != 3)
                    throw std::runtime_error("gpack: malformed samples sidecar line: " + line);
                sample_ids.push_back(cols[0]);
                family_ids.push_back(cols[1]);
                if (cols[2] == "NA")
                    has_labels = false;
                else
                    labels.push_back(static_cast<uint8_t>(std::stoi(cols[2])));
            }
            if (!sample_ids.empty() && static_cast<int64_t>(sample_ids.size()) != n)
                throw std::runtime_error("gpack: samples sidecar row count mismatch");
        } else {
            has_labels = false;
        }
    }
    {
        std::ifstream vs(stem + ".variants.tsv");
        if (vs) {
            std::string line;
            bool header_seen = false;
            while (std::getline(vs, line)) {
                if (line.empty() || line[0] == '#') continue;
                if (!header_seen) {
                    header_seen = true;
                    continue;
                }
                const auto cols = split_tsv_line(line);
                if (cols.size() != 5)
                    throw std::runtime_error("gpack: malformed variants sidecar line: " + line);
                snp_ids.push_back(cols[0]);
            }
            if (!snp_ids.empty() && static_cast<int64_t>(snp_ids.size()) != l)
                throw std::runtime_error("gpack: variants sidecar row count mismatch");
        }
    }

    Cohort c;
    c.genotypes = GenotypeMatrix::from_packed(n, l, std::move(packed), std::move(variants),
                                              std::move(sample_ids), std::move(family_ids),
                                              std::move(snp_ids));
    if ((flags & 1) && has_labels && static_cast<int64_t>(labels.size()) == n) {
        PhenotypeVector y;
        y.labels = std::move(labels);
        y.trait = trait;
        c.phenotype = std::move(y);
    }
    return c;
}

template Tensor<float> one_hot_encode<float>(const GenotypeMatrix&, std::span<const int64_t>);
template Tensor<double> one_hot_encode<double>(const GenotypeMatrix&, std::span<const int64_t>);
template Tensor<float> one_hot_encode<float>(const GenotypeMatrix&);
template Tensor<double> one_hot_encode<double>(const GenotypeMatrix&);
template std::vector<uint8_t> decode_argmax<float>(const Tensor<float>&);
template std::vector<uint8_t> decode_argmax<double>(const Tensor<double>&);

} // namespace snpforge
