#include "snpforge/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>

#include "snpforge/assoc.hpp"
#include "snpforge/ldstats.hpp"

namespace snpforge {

namespace {

// Linear-interpolation percentile over a copy of the values.
double percentile_interp(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("percentile: empty sample");
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * q / 100.0;
    const auto lo = static_cast<size_t>(std::floor(h));
    const auto hi = static_cast<size_t>(std::ceil(h));
    if (lo == hi) return v[lo];
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Min distance from each row of `queries` to `refs`, skipping the diagonal
// pairing when `loo` and both sets are the same matrix object.
std::vector<int64_t> min_distances(const GenotypeMatrix& queries, const GenotypeMatrix& refs,
                                   bool loo) {
    const int64_t nq = queries.n(), nr = refs.n();
    std::vector<int64_t> out(static_cast<size_t>(nq));
    for (int64_t i = 0; i < nq; ++i) {
        int64_t best = std::numeric_limits<int64_t>::max();
        for (int64_t j = 0; j < nr; ++j) {
            if (loo && i == j) continue;
            best = std::min(best, queries.mismatches(i, refs, j));
        }
        out[static_cast<size_t>(i)] = 2 * best;
    }
    return out;
}

} // namespace

NnResult hamming_nn(const GenotypeMatrix& queries, const GenotypeMatrix& references, int workers) {
    if (queries.l() != references.l())
        throw std::invalid_argument("hamming_nn: panels of length " + std::to_string(queries.l()) +
                                    " vs " + std::to_string(references.l()));
    if (references.n() < 2)
        throw std::invalid_argument("hamming_nn: need at least 2 reference samples");
    const int64_t nq = queries.n(), nr = references.n();
    NnResult res;
    res.d1.assign(static_cast<size_t>(nq), 0);
    res.d2.assign(static_cast<size_t>(nq), 0);
    res.idx1.assign(static_cast<size_t>(nq), -1);

    auto scan_rows = [&](int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i) {
            int64_t d1 = std::numeric_limits<int64_t>::max();
            int64_t d2 = std::numeric_limits<int64_t>::max();
            int64_t arg1 = -1;
            for (int64_t j = 0; j < nr; ++j) {
                const int64_t d = queries.mismatches(i, references, j);
                if (d < d1 || (d == d1 && arg1 < 0)) {
                    d2 = d1;
                    d1 = d;
                    arg1 = j;
                } else if (d < d2) {
                    d2 = d;
                }
            }
            res.d1[static_cast<size_t>(i)] = 2 * d1;
            res.d2[static_cast<size_t>(i)] = 2 * d2;
            res.idx1[static_cast<size_t>(i)] = arg1;
        }
    };

    if (workers <= 1 || nq < 2 * workers) {
        scan_rows(0, nq);
    } else {
        std::vector<std::thread> pool;
        const int64_t chunk = (nq + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const int64_t b = w * chunk;
            const int64_t e = std::min(nq, b + chunk);
            if (b < e) pool.emplace_back(scan_rows, b, e);
        }
        for (auto& t : pool) t.join();
    }
    return res;
}

double imr(const GenotypeMatrix& synthetic, const GenotypeMatrix& train) {
    const auto d = min_distances(synthetic, train, false);
    int64_t exact = 0;
    for (const auto v : d) exact += v == 0;
    return 100.0 * static_cast<double>(exact) / static_cast<double>(synthetic.n());
}

double nndr(const GenotypeMatrix& synthetic, const GenotypeMatrix& train) {
    const auto nn = hamming_nn(synthetic, train);
    double acc = 0;
    for (size_t i = 0; i < nn.d1.size(); ++i) {
        const auto d2 = static_cast<double>(nn.d2[i]);
        acc += d2 == 0 ? 1.0 : static_cast<double>(nn.d1[i]) / d2;
    }
    return acc / static_cast<double>(synthetic.n());
}

double mi_auc(const GenotypeMatrix& train, const GenotypeMatrix& holdout,
              const GenotypeMatrix& synthetic) {
    if (train.n() == 0 || holdout.n() == 0 || synthetic.n() == 0)
        throw std::invalid_argument("mi_auc: all three sets must be nonempty");
    const auto dt = min_distances(train, synthetic, false);
    const auto dh = min_distances(holdout, synthetic, false);
    std::vector<double> scores;
    std::vector<uint8_t> labels;
    scores.reserve(dt.size() + dh.size());
    for (const auto d : dt) {
        scores.push_back(-static_cast<double>(d));
        labels.push_back(1);
    }
    for (const auto d : dh) {
        scores.push_back(-static_cast<double>(d));
        labels.push_back(0);
    }
    return roc_auc(scores, labels);
}

double dcr(const GenotypeMatrix& synthetic, const GenotypeMatrix& train,
           const GenotypeMatrix& holdout, double percentile) {
    if (holdout.n() == 0) throw std::invalid_argument("dcr: holdout must be nonempty");
    const auto dh = min_distances(holdout, train, false);
    std::vector<double> hv(dh.begin(), dh.end());
    const double threshold = percentile_interp(std::move(hv), percentile);
    const auto ds = min_distances(synthetic, train, false);
    int64_t below = 0;
    for (const auto d : ds) below += static_cast<double>(d) < threshold;
    return 100.0 * static_cast<double>(below) / static_cast<double>(synthetic.n());
}

double nnaa(const GenotypeMatrix& train, const GenotypeMatrix& synthetic, uint64_t seed,
            int64_t cap) {
    if (train.n() == 0 || synthetic.n() == 0)
        throw std::invalid_argument("nnaa: both sets must be nonempty");
    Rng rng(derive_seed(seed, "nnaa"));
    GenotypeMatrix ts, ss;
    const GenotypeMatrix* tp = &train;
    const GenotypeMatrix* sp = &synthetic;
    if (train.n() > cap) {
        auto idx = rng.sample_without_replacement(train.n(), cap);
        std::sort(idx.begin(), idx.end());
        ts = train.subset_rows(idx);
        tp = &ts;
    }
    if (synthetic.n() > cap) {
        auto idx = rng.sample_without_replacement(synthetic.n(), cap);
        std::sort(idx.begin(), idx.end());
        ss = synthetic.subset_rows(idx);
        sp = &ss;
    }
    const auto d_ts = min_distances(*tp, *sp, false);
    const auto d_tt = min_distances(*tp, *tp, true);
    const auto d_st = min_distances(*sp, *tp, false);
    const auto d_ss = min_distances(*sp, *sp, true);
    double a_t = 0, a_s = 0;
    for (size_t i = 0; i < d_ts.size(); ++i) a_t += d_ts[i] > d_tt[i] ? 1.0 : 0.0;
    for (size_t j = 0; j < d_st.size(); ++j) a_s += d_st[j] > d_ss[j] ? 1.0 : 0.0;
    a_t /= static_cast<double>(d_ts.size());
    a_s /= static_cast<double>(d_st.size());
    return 0.5 * (a_t + a_s);
}

double maf_corr(const GenotypeMatrix& real, const GenotypeMatrix& generated) {
    if (real.l() != generated.l())
        throw std::invalid_argument("maf_corr: panels differ in length");
    return pearson(maf(real), maf(generated));
}

PrivacyRow privacy_overall(const PrivacyInputs& in, const std::string& condition, uint64_t seed) {
    PrivacyRow row;
    row.condition = condition;
    row.scope = "overall";
    row.imr_pct = imr(in.synthetic, in.train);
    row.nndr = nndr(in.synthetic, in.train);
    row.mi_auc = mi_auc(in.train, in.holdout, in.synthetic);
    row.dcr_pct = dcr(in.synthetic, in.train, in.holdout);
    row.nnaa = nnaa(in.train, in.synthetic, seed);
    row.maf_r = maf_corr(in.train, in.synthetic);
    return row;
}

std::vector<PrivacyRow> privacy_report(const PrivacyInputs& in, const std::string& condition,
                                       bool per_class, const PhenotypeVector& train_y,
                                       const PhenotypeVector& holdout_y,
                                       const PhenotypeVector& synthetic_y, uint64_t seed) {
    std::vector<PrivacyRow> rows;
    rows.push_back(privacy_overall(in, condition, seed));
    if (!per_class) return rows;

    auto class_rows = [](const GenotypeMatrix& g, const PhenotypeVector& y, uint8_t cls) {
        std::vector<int64_t> idx;
        for (int64_t i = 0; i < g.n(); ++i)
            if (y.labels[static_cast<size_t>(i)] == cls) idx.push_back(i);
        return g.subset_rows(idx);
    };
    for (uint8_t cls = 0; cls <= 1; ++cls) {
        const auto t = class_rows(in.train, train_y, cls);
        const auto h = class_rows(in.holdout, holdout_y, cls);
        const auto s = class_rows(in.synthetic, synthetic_y, cls);
        if (t.n() < 2 || h.n() == 0 || s.n() == 0) continue;
        PrivacyInputs ci{t, h, s};
        PrivacyRow row = privacy_overall(ci, condition, derive_seed(seed, cls ? "cases" : "controls"));
        row.scope = cls ? "cases" : "controls";
        rows.push_back(row);
    }
    return rows;
}

void write_privacy_tsv(const std::string& path, const std::vector<PrivacyRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("privacy: cannot open '" + path + "' for writing");
    os.precision(6);
    os << "condition\tscope\timr_pct\tnndr\tmi_auc\tnnaa\tdcr_pct\tmaf_r\n";
    for (const auto& r : rows)
        os << r.condition << "\t" << r.scope << "\t" << r.imr_pct << "\t" << r.nndr << "\t"
           << r.mi_auc << "\t" << r.nnaa << "\t" << r.dcr_pct << "\t" << r.maf_r << "\n";
}

} // namespace snpforge
