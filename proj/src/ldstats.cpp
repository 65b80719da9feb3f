#include "snpforge/ldstats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace snpforge {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("pearson: need two equal-length vectors of size >= 2");
    const auto n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        syy += y[i] * y[i];
        sxy += x[i] * y[i];
    }
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vy = syy / n - (sy / n) * (sy / n);
    if (vx <= 0 || vy <= 0) return std::numeric_limits<double>::quiet_NaN();
    return cov / std::sqrt(vx * vy);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(average_ranks(x), average_ranks(y));
}

R2Matrix pairwise_r2(const GenotypeMatrix& g) {
    return pairwise_r2(g, 0, g.l());
}

R2Matrix pairwise_r2(const GenotypeMatrix& g, int64_t snp_begin, int64_t snp_end) {
    if (g.n() < 2) throw std::invalid_argument("pairwise_r2: need n >= 2");
    if (snp_begin < 0 || snp_end > g.l() || snp_begin >= snp_end)
        throw std::invalid_argument("pairwise_r2: invalid SNP range");
    const int64_t l = snp_end - snp_begin;
    const int64_t n = g.n();
    const auto nd = static_cast<double>(n);

    // Column buffers and moments.
    std::vector<double> mean(static_cast<size_t>(l)), var(static_cast<size_t>(l));
    std::vector<uint8_t> cols(static_cast<size_t>(l * n));
    for (int64_t j = 0; j < l; ++j) {
        double s = 0, s2 = 0;
        for (int64_t i = 0; i < n; ++i) {
            const uint8_t d = g.dosage(i, snp_begin + j);
            cols[static_cast<size_t>(j * n + i)] = d;
            s += d;
            s2 += static_cast<double>(d) * d;
        }
        mean[static_cast<size_t>(j)] = s / nd;
        var[static_cast<size_t>(j)] = s2 / nd - (s / nd) * (s / nd);
    }

    R2Matrix m;
    m.l = l;
    m.r2.assign(static_cast<size_t>(l * l), std::numeric_limits<double>::quiet_NaN());
    m.defined.assign(static_cast<size_t>(l * l), 0);
    for (int64_t j = 0; j < l; ++j) {
        const auto ju = static_cast<size_t>(j);
        if (var[ju] <= 1e-12) continue; // monomorphic: whole row/col undefined
        m.r2[static_cast<size_t>(j * l + j)] = 1.0;
        m.defined[static_cast<size_t>(j * l + j)] = 1;
        for (int64_t k = j + 1; k < l; ++k) {
            const auto ku = static_cast<size_t>(k);
            if (var[ku] <= 1e-12) continue;
            double sxy = 0;
            const auto* cj = cols.data() + j * n;
            const auto* ck = cols.data() + k * n;
            for (int64_t i = 0; i < n; ++i)
                sxy += static_cast<double>(cj[i]) * ck[i];
            const double cov = sxy / nd - mean[ju] * mean[ku];
            const double r = cov / std::sqrt(var[ju] * var[ku]);
            const double r2 = r * r;
            m.r2[static_cast<size_t>(j * l + k)] = r2;
            m.r2[static_cast<size_t>(k * l + j)] = r2;
            m.defined[static_cast<size_t>(j * l + k)] = 1;
            m.defined[static_cast<size_t>(k * l + j)] = 1;
        }
    }
    return m;
}

LdDecayCurve ld_decay(const GenotypeMatrix& g, int num_bins, int64_t min_pairs) {
    const R2Matrix m = pairwise_r2(g);
    const auto& vars = g.variants();
    const int64_t l = g.l();

    int64_t total_pairs = 0, same_chrom = 0, missing = 0;
    std::vector<double> dist, r2;
    for (int64_t j = 0; j < l; ++j)
        for (int64_t k = j + 1; k < l; ++k) {
            ++total_pairs;
            if (vars[static_cast<size_t>(j)].chrom != vars[static_cast<size_t>(k)].chrom) continue;
            ++same_chrom;
            if (!m.is_defined(j, k)) {
                ++missing;
                continue;
            }
            const auto d = static_cast<double>(vars[static_cast<size_t>(k)].pos -
                                               vars[static_cast<size_t>(j)].pos);
            dist.push_back(std::max(1.0, d));
            r2.push_back(m.at(j, k));
        }
    if (same_chrom == 0) throw std::runtime_error("ld_decay: no same-chromosome SNP pairs");

    LdDecayCurve c;
    c.same_chrom_fraction =
        total_pairs > 0 ? static_cast<double>(same_chrom) / static_cast<double>(total_pairs) : 0.0;
    c.missing_r2_fraction =
        same_chrom > 0 ? static_cast<double>(missing) / static_cast<double>(same_chrom) : 0.0;
    c.valid_pairs = static_cast<int64_t>(dist.size());

    if (dist.size() >= 2) {
        std::vector<double> log_d(dist.size());
        for (size_t i = 0; i < dist.size(); ++i) log_d[i] = std::log10(dist[i]);
        c.spearman_rho = spearman(log_d, r2);
    }

    if (dist.empty()) return c;
    const double lo = *std::min_element(dist.begin(), dist.end());
    const double hi = *std::max_element(dist.begin(), dist.end());
    const double span = hi > lo ? std::log(hi / lo) : 1.0;

    struct Acc {
        double sum = 0, sum2 = 0;
        int64_t count = 0;
    };
    std::vector<Acc> acc(static_cast<size_t>(num_bins));
    for (size_t i = 0; i < dist.size(); ++i) {
        auto b = static_cast<int64_t>(std::floor(std::log(dist[i] / lo) / span * num_bins));
        b = std::clamp<int64_t>(b, 0, num_bins - 1);
        acc[static_cast<size_t>(b)].sum += r2[i];
        acc[static_cast<size_t>(b)].sum2 += r2[i] * r2[i];
        acc[static_cast<size_t>(b)].count += 1;
    }
    for (int b = 0; b < num_bins; ++b) {
        const auto& a = acc[static_cast<size_t>(b)];
        LdDecayBin bin;
        bin.lo = lo * std::exp(span * b / num_bins);
        bin.hi = lo * std::exp(span * (b + 1) / num_bins);
        bin.count = a.count;
        if (a.count > 0) {
            bin.mean_r2 = a.sum / static_cast<double>(a.count);
            if (a.count > 1) {
                const double sv = (a.sum2 - a.sum * a.sum / static_cast<double>(a.count)) /
                                  static_cast<double>(a.count - 1);
                bin.sem = std::sqrt(std::max(0.0, sv) / static_cast<double>(a.count));
            }
        }
        c.all_bins.push_back(bin);
        if (a.count >= min_pairs) c.bins.push_back(bin);
    }
    return c;
}

void write_r2_grid(const std::string& path, const R2Matrix& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("ld: cannot open '" + path + "' for writing");
    const auto l32 = static_cast<uint32_t>(m.l);
    os.write(reinterpret_cast<const char*>(&l32), 4);
    std::vector<float> row(static_cast<size_t>(m.l));
    for (int64_t j = 0; j < m.l; ++j) {
        for (int64_t k = 0; k < m.l; ++k)
            row[static_cast<size_t>(k)] = m.is_defined(j, k)
                                              ? static_cast<float>(m.at(j, k))
                                              : std::numeric_limits<float>::quiet_NaN();
        os.write(reinterpret_cast<const char*>(row.data()),
                 static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
}

void write_decay_tsv(const std::string& path, const LdDecayCurve& c) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("ld: cannot open '" + path + "' for writing");
    os.precision(10);
    os << "#spearman_rho=" << c.spearman_rho << "\n";
    os << "#same_chrom_fraction=" << c.same_chrom_fraction << "\n";
    os << "#missing_r2_fraction=" << c.missing_r2_fraction << "\n";
    os << "bin_low\tbin_high\tmean_r2\tsem\tcount\n";
    for (const auto& b : c.bins)
        os << b.lo << "\t" << b.hi << "\t" << b.mean_r2 << "\t" << b.sem << "\t" << b.count << "\n";
}

} // namespace snpforge
