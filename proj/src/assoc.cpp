#include "snpforge/assoc.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "snpforge/ldstats.hpp"

namespace snpforge {

namespace {

constexpr double kBetaCap = 10.0;

double sigmoid_d(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

double wald_p(double z) {
    const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
    return std::max(p, 1e-300);
}

// Dosage-dosage squared correlation; monomorphic pairs count as 0 (no pruning).
double dosage_r2(const GenotypeMatrix& g, int64_t j, int64_t k) {
    const int64_t n = g.n();
    const auto nd = static_cast<double>(n);
    double sj = 0, sk = 0, sjj = 0, skk = 0, sjk = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double a = g.dosage(i, j);
        const double b = g.dosage(i, k);
        sj += a;
        sk += b;
        sjj += a * a;
        skk += b * b;
        sjk += a * b;
    }
    const double vj = sjj / nd - (sj / nd) * (sj / nd);
    const double vk = skk / nd - (sk / nd) * (sk / nd);
    if (vj <= 1e-12 || vk <= 1e-12) return 0.0;
    const double cov = sjk / nd - (sj / nd) * (sk / nd);
    // identical columns can exceed 1 by a rounding hair
    return std::min(1.0, cov * cov / (vj * vk));
}

} // namespace

GwasSummary gwas_univariate(const GenotypeMatrix& g, const PhenotypeVector& y) {
    if (static_cast<int64_t>(y.labels.size()) != g.n())
        throw std::invalid_argument("gwas: phenotype length mismatch");
    if (y.n_cases() == 0 || y.n_controls() == 0)
        throw std::invalid_argument("gwas: both classes must be present");
    const int64_t n = g.n();
    const double ybar = static_cast<double>(y.n_cases()) / static_cast<double>(n);
    const double a0 = std::log(ybar / (1.0 - ybar));

    GwasSummary out;
    out.rows.resize(static_cast<size_t>(g.l()));
    for (int64_t j = 0; j < g.l(); ++j) {
        GwasRow row;
        const auto ju = static_cast<size_t>(j);
        row.snp_id = g.snp_ids().empty() ? "snp" + std::to_string(j) : g.snp_ids()[ju];
        row.chrom = g.variants()[ju].chrom;
        row.pos = g.variants()[ju].pos;

        const uint8_t first = g.dosage(0, j);
        bool mono = true;
        for (int64_t i = 1; i < n && mono; ++i) mono = g.dosage(i, j) == first;
        if (mono) {
            row.flag = GwasFlag::monomorphic;
            out.rows[ju] = row;
            continue;
        }

        double a = a0, b = 0;
        double dev_old = std::numeric_limits<double>::infinity();
        bool converged = false, separated = false;
        double se = 0;
        for (int it = 0; it < 25; ++it) {
            double sw = 0, swx = 0, swxx = 0, swz = 0, swxz = 0, dev = 0;
            for (int64_t i = 0; i < n; ++i) {
                const double x = g.dosage(i, j);
                const double eta = a + b * x;
                double p = sigmoid_d(eta);
                p = std::clamp(p, 1e-12, 1.0 - 1e-12);
                const double w = p * (1.0 - p);
                const double yi = y.labels[static_cast<size_t>(i)];
                const double z = eta + (yi - p) / w;
                sw += w;
                swx += w * x;
                swxx += w * x * x;
                swz += w * z;
                swxz += w * x * z;
                dev -= 2.0 * (yi * std::log(p) + (1.0 - yi) * std::log(1.0 - p));
            }
            const double det = sw * swxx - swx * swx;
            if (det <= 1e-12 || !std::isfinite(det)) {
                separated = true;
                break;
            }
            a = (swxx * swz - swx * swxz) / det;
            b = (sw * swxz - swx * swz) / det;
            se = std::sqrt(sw / det);
            if (std::abs(b) > kBetaCap) {
                separated = true;
                break;
            }
            if (std::abs(dev - dev_old) < 1e-8) {
                converged = true;
                break;
            }
            dev_old = dev;
        }
        if (separated || !converged) {
            row.flag = GwasFlag::separation;
            row.beta = b >= 0 ? kBetaCap : -kBetaCap;
            row.se = se > 0 && std::isfinite(se) ? se : kBetaCap;
            row.p = wald_p(row.beta / row.se);
        } else {
            row.beta = b;
            row.se = se;
            row.p = wald_p(b / se);
        }
        out.rows[ju] = row;
    }
    return out;
}

SnpPanel ld_clump(const GwasSummary& summary, const GenotypeMatrix& g, uint64_t window_bp,
                  double r2_threshold) {
    if (static_cast<int64_t>(summary.rows.size()) != g.l())
        throw std::invalid_argument("ld_clump: summary rows do not match the panel");
    std::vector<int64_t> order(summary.rows.size());
    std::iota(order.begin(), order.end(), int64_t{0});
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        const auto& ra = summary.rows[static_cast<size_t>(a)];
        const auto& rb = summary.rows[static_cast<size_t>(b)];
        if (ra.p != rb.p) return ra.p < rb.p;
        return a < b;
    });

    SnpPanel panel;
    panel.window_bp = window_bp;
    panel.r2_threshold = r2_threshold;
    for (const auto j : order) {
        const auto& vj = g.variants()[static_cast<size_t>(j)];
        bool pruned = false;
        for (const auto k : panel.indices) {
            const auto& vk = g.variants()[static_cast<size_t>(k)];
            if (vj.chrom != vk.chrom) continue;
            const uint64_t d = vj.pos > vk.pos ? vj.pos - vk.pos : vk.pos - vj.pos;
            if (d > window_bp) continue;
            if (dosage_r2(g, j, k) > r2_threshold) {
                pruned = true;
                break;
            }
        }
        if (!pruned) panel.indices.push_back(j);
    }
    return panel;
}

SnpPanel select_top_l(const SnpPanel& panel, int64_t l_target) {
    if (panel.indices.empty()) throw std::invalid_argument("select_top_l: empty panel");
    SnpPanel out = panel;
    if (l_target < static_cast<int64_t>(out.indices.size()))
        out.indices.resize(static_cast<size_t>(l_target));
    return out;
}

std::vector<double> prs_score(const GenotypeMatrix& g, std::span<const double> betas,
                              const SnpPanel& panel) {
    if (betas.size() != panel.indices.size())
        throw std::invalid_argument("prs_score: " + std::to_string(betas.size()) + " betas for " +
                                    std::to_string(panel.indices.size()) + " panel SNPs");
    std::vector<double> scores(static_cast<size_t>(g.n()), 0.0);
    for (size_t k = 0; k < panel.indices.size(); ++k) {
        const int64_t j = panel.indices[k];
        const double b = betas[k];
        if (b == 0.0) continue;
        for (int64_t i = 0; i < g.n(); ++i)
            scores[static_cast<size_t>(i)] += b * g.dosage(i, j);
    }
    return scores;
}

std::vector<double> external_prs(const GenotypeMatrix& g, std::span<const double> betas,
                                 const SnpPanel& panel, const PhenotypeVector& y) {
    auto scores = prs_score(g, betas, panel);
    std::vector<double> yd(y.labels.begin(), y.labels.end());
    const double rho = spearman(scores, yd);
    if (std::isfinite(rho) && rho < 0)
        for (auto& s : scores) s = -s;
    return scores;
}

double roc_auc(std::span<const double> scores, std::span<const uint8_t> labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("roc_auc: score/label length mismatch");
    int64_t n_pos = 0;
    for (const auto l : labels) n_pos += l;
    const auto n = static_cast<int64_t>(labels.size());
    const int64_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("roc_auc: both classes must be present");

    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), int64_t{0});
    std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        return scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)];
    });
    double rank_sum_pos = 0;
    int64_t i = 0;
    while (i < n) {
        int64_t j = i;
        while (j + 1 < n &&
               scores[static_cast<size_t>(idx[static_cast<size_t>(j + 1)])] ==
                   scores[static_cast<size_t>(idx[static_cast<size_t>(i)])])
            ++j;
        const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (int64_t k = i; k <= j; ++k)
            if (labels[static_cast<size_t>(idx[static_cast<size_t>(k)])]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

RidgeModel logistic_ridge_fit(const GenotypeMatrix& g, const SnpPanel& panel,
                              const PhenotypeVector& y, double lambda) {
    if (lambda < 0) throw std::invalid_argument("logistic_ridge: lambda must be >= 0");
    if (static_cast<int64_t>(y.labels.size()) != g.n())
        throw std::invalid_argument("logistic_ridge: phenotype length mismatch");
    const int64_t n = g.n();
    const auto p = static_cast<int64_t>(panel.indices.size());

    Eigen::MatrixXd X(n, p + 1);
    Eigen::VectorXd yv(n);
    for (int64_t i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        for (int64_t k = 0; k < p; ++k) X(i, k + 1) = g.dosage(i, panel.indices[static_cast<size_t>(k)]);
        yv(i) = y.labels[static_cast<size_t>(i)];
    }
    const double ybar = yv.mean();
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
    beta(0) = std::log(std::clamp(ybar, 1e-12, 1.0 - 1e-12) /
                       (1.0 - std::clamp(ybar, 1e-12, 1.0 - 1e-12)));

    auto objective = [&](const Eigen::VectorXd& b) {
        const Eigen::VectorXd eta = X * b;
        double ll = 0;
        for (int64_t i = 0; i < n; ++i) {
            const double pi = std::clamp(sigmoid_d(eta(i)), 1e-12, 1.0 - 1e-12);
            ll += yv(i) * std::log(pi) + (1.0 - yv(i)) * std::log(1.0 - pi);
        }
        double pen = 0;
        for (int64_t k = 1; k <= p; ++k) pen += b(k) * b(k);
        return -2.0 * ll + lambda * pen;
    };

    double obj_old = objective(beta);
    RidgeModel model;
    bool converged = false;
    for (int it = 0; it < 100; ++it) {
        const Eigen::VectorXd eta = X * beta;
        Eigen::VectorXd prob(n), w(n);
        for (int64_t i = 0; i < n; ++i) {
            prob(i) = std::clamp(sigmoid_d(eta(i)), 1e-12, 1.0 - 1e-12);
            w(i) = prob(i) * (1.0 - prob(i));
        }
        Eigen::VectorXd grad = X.transpose() * (prob - yv);
        for (int64_t k = 1; k <= p; ++k) grad(k) += lambda * beta(k);
        Eigen::MatrixXd hess = X.transpose() * w.asDiagonal() * X;
        for (int64_t k = 1; k <= p; ++k) hess(k, k) += lambda;
        const Eigen::VectorXd step = hess.ldlt().solve(grad);
        beta -= step;
        const double obj = objective(beta);
        model.iterations = it + 1;
        if (std::abs(obj - obj_old) < 1e-6) {
            converged = true;
            break;
        }
        obj_old = obj;
    }
    if (!converged)
        throw std::runtime_error("logistic_ridge: no convergence after 100 iterations");
    model.intercept = beta(0);
    model.coef.resize(static_cast<size_t>(p));
    for (int64_t k = 0; k < p; ++k) model.coef[static_cast<size_t>(k)] = beta(k + 1);
    return model;
}

std::vector<double> ridge_scores(const RidgeModel& model, const GenotypeMatrix& g,
                                 const SnpPanel& panel) {
    auto scores = prs_score(g, model.coef, panel);
    for (auto& s : scores) s += model.intercept;
    return scores;
}

// ---- text formats -----------------------------------------------------------

namespace {

const char* flag_str(GwasFlag f) {
    switch (f) {
        case GwasFlag::monomorphic: return "monomorphic";
        case GwasFlag::separation: return "separation";
        default: return "ok";
    }
}

GwasFlag parse_flag(const std::string& s) {
    if (s == "monomorphic") return GwasFlag::monomorphic;
    if (s == "separation") return GwasFlag::separation;
    if (s == "ok") return GwasFlag::ok;
    throw std::runtime_error("gwas tsv: unknown flag '" + s + "'");
}

} // namespace

void write_gwas_tsv(const std::string& path, const GwasSummary& s) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("gwas tsv: cannot open '" + path + "' for writing");
    os.precision(17);
    os << "snp_id\tchrom\tpos\tbeta\tse\tp\tflag\n";
    for (const auto& r : s.rows)
        os << r.snp_id << "\t" << static_cast<int>(r.chrom) << "\t" << r.pos << "\t" << r.beta
           << "\t" << r.se << "\t" << r.p << "\t" << flag_str(r.flag) << "\n";
}

GwasSummary read_gwas_tsv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("gwas tsv: cannot open '" + path + "'");
    GwasSummary s;
    std::string line;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        std::istringstream ls(line);
        GwasRow r;
        std::string flag;
        int chrom;
        if (!(ls >> r.snp_id >> chrom >> r.pos >> r.beta >> r.se >> r.p >> flag))
            throw std::runtime_error("gwas tsv: malformed line: " + line);
        r.chrom = static_cast<uint8_t>(chrom);
        r.flag = parse_flag(flag);
        s.rows.push_back(std::move(r));
    }
    return s;
}

void write_panel(const std::string& path, const SnpPanel& panel, const GenotypeMatrix& g) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("panel: cannot open '" + path + "' for writing");
    os << "#window_bp=" << panel.window_bp << "\n";
    os << "#r2_threshold=" << panel.r2_threshold << "\n";
    for (const auto j : panel.indices) {
        const auto ju = static_cast<size_t>(j);
        os << (g.snp_ids().empty() ? "snp" + std::to_string(j) : g.snp_ids()[ju]) << "\n";
    }
}

SnpPanel read_panel(const std::string& path, const GenotypeMatrix& g) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("panel: cannot open '" + path + "'");
    SnpPanel panel;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line.rfind("#window_bp=", 0) == 0) {
            panel.window_bp = std::stoull(line.substr(11));
            continue;
        }
        if (line.rfind("#r2_threshold=", 0) == 0) {
            panel.r2_threshold = std::stod(line.substr(14));
            continue;
        }
        if (line[0] == '#') continue;
        bool found = false;
        for (int64_t j = 0; j < g.l(); ++j) {
            const std::string id =
                g.snp_ids().empty() ? "snp" + std::to_string(j) : g.snp_ids()[static_cast<size_t>(j)];
            if (id == line) {
                panel.indices.push_back(j);
                found = true;
                break;
            }
        }
        if (!found) throw std::runtime_error("panel: unknown snp id '" + line + "'");
    }
    return panel;
}

} // namespace snpforge
