#include "snpforge/harness.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace snpforge {

// ---- folds / TSTR -----------------------------------------------------------------

std::vector<int> stratified_kfold(const std::vector<uint8_t>& labels, int k, uint64_t seed) {
    if (k < 2) throw std::invalid_argument("stratified_kfold: need k >= 2");
    std::vector<int> fold(labels.size(), 0);
    Rng rng(derive_seed(seed, "kfold"));
    for (uint8_t cls = 0; cls <= 1; ++cls) {
        std::vector<int64_t> idx;
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) idx.push_back(static_cast<int64_t>(i));
        rng.shuffle(idx.begin(), idx.end());
        for (size_t j = 0; j < idx.size(); ++j)
            fold[static_cast<size_t>(idx[j])] = static_cast<int>(j % static_cast<size_t>(k));
    }
    return fold;
}

namespace {

SnpPanel full_panel(const GenotypeMatrix& g) {
    SnpPanel p;
    p.indices.resize(static_cast<size_t>(g.l()));
    std::iota(p.indices.begin(), p.indices.end(), int64_t{0});
    return p;
}

std::vector<double> betas_by_index(const GwasSummary& s) {
    std::vector<double> b(s.rows.size());
    for (size_t j = 0; j < s.rows.size(); ++j) b[j] = s.rows[j].beta;
    return b;
}

struct FoldSplit {
    GenotypeMatrix g;
    PhenotypeVector y;
};

FoldSplit fold_train(const GenotypeMatrix& g, const PhenotypeVector& y,
                     const std::vector<int>& folds, int held_out) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < g.n(); ++i)
        if (folds[static_cast<size_t>(i)] != held_out) idx.push_back(i);
    FoldSplit out;
    out.g = g.subset_rows(idx);
    out.y.trait = y.trait;
    for (const auto i : idx) out.y.labels.push_back(y.labels[static_cast<size_t>(i)]);
    return out;
}

} // namespace

std::vector<TstrRow> run_tstr(const std::vector<ConditionData>& conditions,
                              const GenotypeMatrix& test_g, const PhenotypeVector& test_y,
                              std::span<const double> external_betas, const TstrConfig& cfg) {
    if (static_cast<int64_t>(test_y.labels.size()) != test_g.n())
        throw std::invalid_argument("run_tstr: test phenotype length mismatch");
    const uint64_t test_checksum = test_g.checksum();
    const SnpPanel panel = full_panel(test_g);

    std::vector<TstrRow> rows;
    for (const auto& want : cfg.conditions) {
        const ConditionData* cond = nullptr;
        for (const auto& c : conditions)
            if (c.name == want) cond = &c;
        if (cond == nullptr)
            throw std::runtime_error("run_tstr: missing data for condition '" + want + "'");
        // Every condition is scored against the identical real test matrix.
        if (test_g.checksum() != test_checksum)
            throw std::runtime_error("run_tstr: test matrix changed between conditions");

        const auto folds = stratified_kfold(cond->phenotype.labels, cfg.folds,
                                            derive_seed(cfg.seed, "tstr_" + cond->name));
        for (const auto& pred : cfg.predictors) {
            TstrRow row;
            row.condition = cond->name;
            row.predictor = pred;
            for (int f = 0; f < cfg.folds; ++f) {
                const auto tr = fold_train(cond->genotypes, cond->phenotype, folds, f);
                std::vector<double> scores;
                if (pred == "prs_univariate") {
                    const auto gw = gwas_univariate(tr.g, tr.y);
                    scores = prs_score(test_g, betas_by_index(gw), panel);
                } else if (pred == "logistic_ridge") {
                    const auto model = logistic_ridge_fit(tr.g, panel, tr.y, cfg.ridge_lambda);
                    scores = ridge_scores(model, test_g, panel);
                } else if (pred == "external_prs") {
                    if (external_betas.size() != static_cast<size_t>(test_g.l()))
                        throw std::invalid_argument("run_tstr: external betas length mismatch");
                    // Sign alignment is decided on the fold's training cohort.
                    const auto train_scores = prs_score(tr.g, external_betas, panel);
                    std::vector<double> yd(tr.y.labels.begin(), tr.y.labels.end());
                    const double rho = spearman(train_scores, yd);
                    scores = prs_score(test_g, external_betas, panel);
                    if (std::isfinite(rho) && rho < 0)
                        for (auto& s : scores) s = -s;
                } else {
                    throw std::invalid_argument("run_tstr: unknown predictor '" + pred + "'");
                }
                row.fold_aucs.push_back(roc_auc(scores, test_y.labels));
            }
            double mean = 0;
            for (const auto a : row.fold_aucs) mean += a;
            mean /= static_cast<double>(row.fold_aucs.size());
            double var = 0;
            for (const auto a : row.fold_aucs) var += (a - mean) * (a - mean);
            const double sd = row.fold_aucs.size() > 1
                                  ? std::sqrt(var / static_cast<double>(row.fold_aucs.size() - 1))
                                  : 0.0;
            row.mean_auc = mean;
            row.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(row.fold_aucs.size()));
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

// ---- subsampling ---------------------------------------------------------------------

std::vector<int64_t> subsample_random(int64_t pool_size, double fraction, uint64_t seed) {
    if (fraction <= 0 || fraction > 1)
        throw std::invalid_argument("subsample_random: fraction must lie in (0,1]");
    const auto k = static_cast<int64_t>(std::llround(fraction * static_cast<double>(pool_size)));
    Rng rng(derive_seed(seed, "subsample_random"));
    auto idx = rng.sample_without_replacement(pool_size, std::min(pool_size, std::max<int64_t>(k, 0)));
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<int64_t> subsample_diversity(const GenotypeMatrix& pool,
                                         const PhenotypeVector& labels, double fraction) {
    if (fraction <= 0 || fraction > 1)
        throw std::invalid_argument("subsample_diversity: fraction must lie in (0,1]");
    std::vector<int64_t> chosen;
    for (uint8_t cls = 0; cls <= 1; ++cls) {
        std::vector<int64_t> members;
        for (int64_t i = 0; i < pool.n(); ++i)
            if (labels.labels[static_cast<size_t>(i)] == cls) members.push_back(i);
        if (members.empty()) continue;
        const auto take =
            static_cast<int64_t>(std::llround(fraction * static_cast<double>(members.size())));
        // Leave-one-out nearest same-class distance.
        std::vector<int64_t> nn(members.size(), 0);
        for (size_t a = 0; a < members.size(); ++a) {
            int64_t best = std::numeric_limits<int64_t>::max();
            for (size_t b = 0; b < members.size(); ++b) {
                if (a == b) continue;
                best = std::min(best, pool.mismatches(members[a], pool, members[b]));
            }
            nn[a] = members.size() > 1 ? 2 * best : 0;
        }
        std::vector<size_t> order(members.size());
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (nn[a] != nn[b]) return nn[a] > nn[b];
            return members[a] < members[b];
        });
        for (int64_t t = 0; t < std::min<int64_t>(take, static_cast<int64_t>(order.size())); ++t)
            chosen.push_back(members[order[static_cast<size_t>(t)]]);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

PcaResult pca_power(const GenotypeMatrix& g, int components, uint64_t seed, int iters) {
    if (components < 1) throw std::invalid_argument("pca_power: need at least one component");
    const int64_t n = g.n(), l = g.l();
    Eigen::MatrixXd a(n, l);
    PcaResult out;
    out.mean.resize(static_cast<size_t>(l));
    for (int64_t j = 0; j < l; ++j) {
        double s = 0;
        for (int64_t i = 0; i < n; ++i) s += g.dosage(i, j);
        out.mean[static_cast<size_t>(j)] = s / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i)
            a(i, j) = g.dosage(i, j) - out.mean[static_cast<size_t>(j)];
    }
    Rng rng(derive_seed(seed, "pca_power"));
    for (int c = 0; c < components; ++c) {
        Eigen::VectorXd v(l);
        for (int64_t j = 0; j < l; ++j) v(j) = rng.normal();
        v.normalize();
        for (int it = 0; it < iters; ++it) {
            Eigen::VectorXd next = a.transpose() * (a * v);
            const double norm = next.norm();
            if (norm < 1e-12) break; // exhausted variance
            next /= norm;
            const double delta = (next - v).norm();
            v = next;
            if (delta < 1e-10) break;
        }
        out.components.emplace_back(v.data(), v.data() + l);
        const Eigen::VectorXd proj = a * v;
        a -= proj * v.transpose(); // deflate
    }
    return out;
}

std::vector<std::vector<double>> pca_project(const GenotypeMatrix& g, const PcaResult& pca) {
    const int64_t n = g.n(), l = g.l();
    const auto c = pca.components.size();
    std::vector<std::vector<double>> out(static_cast<size_t>(n), std::vector<double>(c, 0.0));
    for (int64_t i = 0; i < n; ++i)
        for (size_t k = 0; k < c; ++k) {
            double acc = 0;
            const auto& comp = pca.components[k];
            for (int64_t j = 0; j < l; ++j)
                acc += (g.dosage(i, j) - pca.mean[static_cast<size_t>(j)]) *
                       comp[static_cast<size_t>(j)];
            out[static_cast<size_t>(i)][k] = acc;
        }
    return out;
}

int nearest_centroid(const std::vector<double>& p,
                     const std::vector<std::vector<double>>& centroids) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < centroids.size(); ++c) {
        double d = 0;
        for (size_t k = 0; k < p.size(); ++k) {
            const double diff = p[k] - centroids[c][k];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k, uint64_t seed,
                    int iters) {
    if (points.empty()) throw std::invalid_argument("kmeans: no points");
    if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
    const auto n = points.size();
    const auto dim = points[0].size();
    Rng rng(derive_seed(seed, "kmeans"));

    KmeansResult res;
    // k-means++ seeding
    res.centroids.push_back(points[rng.below(n)]);
    std::vector<double> d2(n, 0.0);
    while (res.centroids.size() < static_cast<size_t>(k)) {
        double total = 0;
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : res.centroids) {
                double d = 0;
                for (size_t j = 0; j < dim; ++j) {
                    const double diff = points[i][j] - c[j];
                    d += diff * diff;
                }
                best = std::min(best, d);
            }
            d2[i] = best;
            total += best;
        }
        if (total <= 0) {
            res.centroids.push_back(points[rng.below(n)]);
            continue;
        }
        double target = rng.uniform() * total;
        size_t pick = n - 1;
        for (size_t i = 0; i < n; ++i) {
            target -= d2[i];
            if (target <= 0) {
                pick = i;
                break;
            }
        }
        res.centroids.push_back(points[pick]);
    }

    res.assignment.assign(n, 0);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (size_t i = 0; i < n; ++i) {
            const int c = nearest_centroid(points[i], res.centroids);
            if (c != res.assignment[i]) {
                res.assignment[i] = c;
                changed = true;
            }
        }
        std::vector<std::vector<double>> sums(static_cast<size_t>(k),
                                              std::vector<double>(dim, 0.0));
        std::vector<int64_t> counts(static_cast<size_t>(k), 0);
        for (size_t i = 0; i < n; ++i) {
            const auto c = static_cast<size_t>(res.assignment[i]);
            ++counts[c];
            for (size_t j = 0; j < dim; ++j) sums[c][j] += points[i][j];
        }
        for (size_t c = 0; c < static_cast<size_t>(k); ++c)
            if (counts[c] > 0)
                for (size_t j = 0; j < dim; ++j)
                    res.centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
        if (!changed) break;
    }
    return res;
}

std::vector<int64_t> subsample_pca_stratified(const GenotypeMatrix& pool,
                                              const PhenotypeVector& pool_labels,
                                              const GenotypeMatrix& real_train, double fraction,
                                              int k, int components, uint64_t seed) {
    if (fraction <= 0 || fraction > 1)
        throw std::invalid_argument("subsample_pca_stratified: fraction must lie in (0,1]");
    const auto pca = pca_power(real_train, components, seed);
    const auto real_proj = pca_project(real_train, pca);
    const auto km = kmeans(real_proj, k, seed);
    std::vector<double> mass(static_cast<size_t>(k), 0.0);
    for (const auto a : km.assignment) mass[static_cast<size_t>(a)] += 1.0;
    for (auto& m : mass) m /= static_cast<double>(real_train.n());

    const auto pool_proj = pca_project(pool, pca);
    std::vector<int> pool_cluster(pool_proj.size());
    for (size_t i = 0; i < pool_proj.size(); ++i)
        pool_cluster[i] = nearest_centroid(pool_proj[i], km.centroids);

    Rng rng(derive_seed(seed, "pca_strat_pick"));
    std::vector<int64_t> chosen;
    bool warned = false;
    for (uint8_t cls = 0; cls <= 1; ++cls) {
        std::vector<std::vector<int64_t>> by_cluster(static_cast<size_t>(k));
        int64_t class_n = 0;
        for (int64_t i = 0; i < pool.n(); ++i)
            if (pool_labels.labels[static_cast<size_t>(i)] == cls) {
                by_cluster[static_cast<size_t>(pool_cluster[static_cast<size_t>(i)])].push_back(i);
                ++class_n;
            }
        if (class_n == 0) continue;
        const auto target =
            static_cast<int64_t>(std::llround(fraction * static_cast<double>(class_n)));

        // Quotas proportional to the real cluster mass.
        std::vector<int64_t> quota(static_cast<size_t>(k), 0);
        std::vector<std::pair<double, int>> fracs;
        int64_t assigned = 0;
        for (int c = 0; c < k; ++c) {
            const double raw = mass[static_cast<size_t>(c)] * static_cast<double>(target);
            quota[static_cast<size_t>(c)] = static_cast<int64_t>(std::floor(raw));
            assigned += quota[static_cast<size_t>(c)];
            fracs.emplace_back(raw - std::floor(raw), c);
        }
        std::sort(fracs.begin(), fracs.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int64_t r = 0; r < target - assigned; ++r)
            ++quota[static_cast<size_t>(fracs[static_cast<size_t>(r) % fracs.size()].second)];

        // Fill quotas; shortfall moves to the heaviest clusters with spares.
        int64_t shortfall = 0;
        std::vector<int64_t> taken(static_cast<size_t>(k), 0);
        for (int c = 0; c < k; ++c) {
            auto& members = by_cluster[static_cast<size_t>(c)];
            const auto avail = static_cast<int64_t>(members.size());
            const int64_t want = quota[static_cast<size_t>(c)];
            const int64_t take = std::min(want, avail);
            if (take < want) shortfall += want - take;
            rng.shuffle(members.begin(), members.end());
            for (int64_t t = 0; t < take; ++t) chosen.push_back(members[static_cast<size_t>(t)]);
            taken[static_cast<size_t>(c)] = take;
        }
        if (shortfall > 0 && !warned) {
            std::cerr << "subsample_pca_stratified: redistributing " << shortfall
                      << " slots from under-filled clusters\n";
            warned = true;
        }
        std::vector<int> by_mass(static_cast<size_t>(k));
        std::iota(by_mass.begin(), by_mass.end(), 0);
        std::sort(by_mass.begin(), by_mass.end(), [&](int a, int b) {
            if (mass[static_cast<size_t>(a)] != mass[static_cast<size_t>(b)])
                return mass[static_cast<size_t>(a)] > mass[static_cast<size_t>(b)];
            return a < b;
        });
        while (shortfall > 0) {
            bool progress = false;
            for (const auto c : by_mass) {
                if (shortfall == 0) break;
                auto& members = by_cluster[static_cast<size_t>(c)];
                if (taken[static_cast<size_t>(c)] < static_cast<int64_t>(members.size())) {
                    chosen.push_back(members[static_cast<size_t>(taken[static_cast<size_t>(c)]++)]);
                    --shortfall;
                    progress = true;
                }
            }
            if (!progress) break; // pool exhausted
        }
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

// ---- beta correlation --------------------------------------------------------------------

double beta_pearson(const GwasSummary& a, const GwasSummary& b, int64_t* n_used) {
    if (a.rows.size() != b.rows.size())
        throw std::invalid_argument("beta_correlation: summaries cover different panels");
    std::vector<double> xa, xb;
    for (size_t j = 0; j < a.rows.size(); ++j) {
        if (a.rows[j].flag == GwasFlag::separation || b.rows[j].flag == GwasFlag::separation)
            continue;
        xa.push_back(a.rows[j].beta);
        xb.push_back(b.rows[j].beta);
    }
    if (n_used) *n_used = static_cast<int64_t>(xa.size());
    if (xa.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    return pearson(xa, xb);
}

BetaCorrelation beta_correlation(const GwasSummary& real, const GwasSummary& recon,
                                 const GwasSummary& synth) {
    BetaCorrelation out;
    out.r_recon = beta_pearson(real, recon, &out.n_recon);
    out.r_synth = beta_pearson(real, synth, &out.n_synth);
    return out;
}

// ---- report -------------------------------------------------------------------------------

nlohmann::json assemble_report(const std::vector<TstrRow>& tstr,
                               const std::vector<PrivacyRow>& privacy,
                               const std::vector<LdSection>& ld,
                               const std::optional<BetaCorrelation>& betas) {
    nlohmann::json doc;
    doc["version"] = 1;
    doc["tstr"] = nlohmann::json::array();
    for (const auto& r : tstr)
        doc["tstr"].push_back({{"condition", r.condition},
                               {"predictor", r.predictor},
                               {"mean_auc", r.mean_auc},
                               {"ci95", r.ci95},
                               {"fold_aucs", r.fold_aucs}});
    doc["privacy"] = nlohmann::json::array();
    for (const auto& r : privacy)
        doc["privacy"].push_back({{"condition", r.condition},
                                  {"scope", r.scope},
                                  {"imr_pct", r.imr_pct},
                                  {"nndr", r.nndr},
                                  {"mi_auc", r.mi_auc},
                                  {"nnaa", r.nnaa},
                                  {"dcr_pct", r.dcr_pct},
                                  {"maf_r", r.maf_r}});
    doc["ld"] = nlohmann::json::object();
    for (const auto& s : ld) {
        nlohmann::json bins = nlohmann::json::array();
        for (const auto& b : s.curve.bins)
            bins.push_back({{"lo", b.lo},
                            {"hi", b.hi},
                            {"mean_r2", b.mean_r2},
                            {"sem", b.sem},
                            {"count", b.count}});
        doc["ld"][s.condition] = {{"spearman_rho", s.curve.spearman_rho},
                                  {"same_chrom_fraction", s.curve.same_chrom_fraction},
                                  {"missing_r2_fraction", s.curve.missing_r2_fraction},
                                  {"valid_pairs", s.curve.valid_pairs},
                                  {"bins", bins}};
    }
    if (betas) {
        doc["betas"] = {{"r_recon", betas->r_recon},
                        {"r_synth", betas->r_synth},
                        {"n_recon", betas->n_recon},
                        {"n_synth", betas->n_synth}};
    } else {
        doc["betas"] = nullptr;
    }
    return doc;
}

void write_tstr_tsv(const std::string& path, const std::vector<TstrRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("tstr: cannot open '" + path + "' for writing");
    os.precision(6);
    os << "condition\tpredictor\tmean_auc\tci95\tfold_aucs\n";
    for (const auto& r : rows) {
        os << r.condition << "\t" << r.predictor << "\t" << r.mean_auc << "\t" << r.ci95 << "\t";
        for (size_t i = 0; i < r.fold_aucs.size(); ++i)
            os << (i ? "," : "") << r.fold_aucs[i];
        os << "\n";
    }
}

void write_betas_tsv(const std::string& path, const GwasSummary& real, const GwasSummary& recon,
                     const GwasSummary& synth) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("betas: cannot open '" + path + "' for writing");
    os.precision(10);
    os << "snp_id\tbeta_real\tbeta_recon\tbeta_synth\tflag_real\tflag_recon\tflag_synth\n";
    auto flag = [](GwasFlag f) {
        return f == GwasFlag::separation ? "separation"
               : f == GwasFlag::monomorphic ? "monomorphic"
                                            : "ok";
    };
    for (size_t j = 0; j < real.rows.size(); ++j)
        os << real.rows[j].snp_id << "\t" << real.rows[j].beta << "\t" << recon.rows[j].beta
           << "\t" << synth.rows[j].beta << "\t" << flag(real.rows[j].flag) << "\t"
           << flag(recon.rows[j].flag) << "\t" << flag(synth.rows[j].flag) << "\n";
}

// ---- config file ----------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : s) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config: invalid boolean '" + v + "'");
}

} // namespace

EvalConfig parse_eval_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
    EvalConfig cfg;
    std::string section;
    std::string line;
    bool version_seen = false;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = t.substr(1, t.size() - 2);
            static const std::set<std::string> known{"pipeline", "simulate", "split",  "select",
                                                     "vae",      "ldm",      "generate", "tstr",
                                                     "privacy"};
            if (!known.count(section))
                throw std::runtime_error("config: unknown section [" + section + "] at line " +
                                         std::to_string(lineno));
            if (section == "select") cfg.do_select = true;
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: expected key = value at line " +
                                     std::to_string(lineno));
        const auto key = trim(t.substr(0, eq));
        const auto val = trim(t.substr(eq + 1));
        const std::string where = section.empty() ? key : section + "." + key;

        if (where == "version") {
            if (std::stoi(val) != 1)
                throw std::runtime_error("config: unsupported version " + val);
            version_seen = true;
        } else if (where == "pipeline.seed") {
            cfg.seed = std::stoull(val);
        } else if (where == "pipeline.out") {
            cfg.out_dir = val;
        } else if (where == "pipeline.deterministic") {
            cfg.deterministic = parse_bool(val);
        } else if (where == "pipeline.workers") {
            cfg.workers = std::stoi(val);
        } else if (where == "simulate.n") {
            cfg.sim.n = std::stoll(val);
        } else if (where == "simulate.l") {
            cfg.sim.l = std::stoll(val);
        } else if (where == "simulate.blocks") {
            cfg.sim.blocks = std::stoi(val);
        } else if (where == "simulate.founders") {
            cfg.sim.founders = std::stoi(val);
        } else if (where == "simulate.recomb") {
            cfg.sim.recomb = std::stod(val);
        } else if (where == "simulate.maf_lo") {
            cfg.sim.maf_lo = std::stod(val);
        } else if (where == "simulate.maf_hi") {
            cfg.sim.maf_hi = std::stod(val);
        } else if (where == "simulate.prevalence") {
            cfg.prevalence = std::stod(val);
        } else if (where == "split.train") {
            cfg.fractions[0] = std::stod(val);
        } else if (where == "split.val") {
            cfg.fractions[1] = std::stod(val);
        } else if (where == "split.test") {
            cfg.fractions[2] = std::stod(val);
        } else if (where == "select.window_kb") {
            cfg.window_bp = std::stoull(val) * 1000;
        } else if (where == "select.r2") {
            cfg.r2_threshold = std::stod(val);
        } else if (where == "select.top_l") {
            cfg.top_l = std::stoll(val);
        } else if (where == "vae.preset") {
            cfg.vae_preset = val;
        } else if (where == "vae.epochs") {
            cfg.vae_epochs = std::stoi(val);
        } else if (where == "ldm.preset") {
            cfg.ldm_preset = val;
        } else if (where == "ldm.epochs") {
            cfg.ldm_epochs = std::stoi(val);
        } else if (where == "generate.steps") {
            cfg.sample_steps = std::stoi(val);
        } else if (where == "generate.guidance") {
            cfg.guidance = std::stod(val);
        } else if (where == "tstr.folds") {
            cfg.tstr.folds = std::stoi(val);
        } else if (where == "tstr.ridge_lambda") {
            cfg.tstr.ridge_lambda = std::stod(val);
        } else if (where == "tstr.conditions") {
            cfg.tstr.conditions = split_csv(val);
        } else if (where == "tstr.predictors") {
            cfg.tstr.predictors = split_csv(val);
        } else if (where == "privacy.per_class") {
            cfg.privacy_per_class = parse_bool(val);
        } else {
            throw std::runtime_error("config: unknown key '" + where + "' at line " +
                                     std::to_string(lineno));
        }
    }
    if (!version_seen) throw std::runtime_error("config: missing 'version = 1'");
    return cfg;
}

void write_resolved_config(const EvalConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot open '" + path + "' for writing");
    os.precision(17);
    os << "version = 1\n\n[pipeline]\nseed = " << cfg.seed << "\nout = " << cfg.out_dir
       << "\ndeterministic = " << (cfg.deterministic ? "true" : "false")
       << "\nworkers = " << cfg.workers << "\n\n[simulate]\nn = " << cfg.sim.n
       << "\nl = " << cfg.sim.l << "\nblocks = " << cfg.sim.blocks
       << "\nfounders = " << cfg.sim.founders << "\nrecomb = " << cfg.sim.recomb
       << "\nmaf_lo = " << cfg.sim.maf_lo << "\nmaf_hi = " << cfg.sim.maf_hi
       << "\nprevalence = " << cfg.prevalence << "\n\n[split]\ntrain = " << cfg.fractions[0]
       << "\nval = " << cfg.fractions[1] << "\ntest = " << cfg.fractions[2] << "\n";
    if (cfg.do_select)
        os << "\n[select]\nwindow_kb = " << cfg.window_bp / 1000 << "\nr2 = " << cfg.r2_threshold
           << "\ntop_l = " << cfg.top_l << "\n";
    os << "\n[vae]\npreset = " << cfg.vae_preset << "\nepochs = " << cfg.vae_epochs
       << "\n\n[ldm]\npreset = " << cfg.ldm_preset << "\nepochs = " << cfg.ldm_epochs
       << "\n\n[generate]\nsteps = " << cfg.sample_steps << "\nguidance = " << cfg.guidance
       << "\n\n[tstr]\nfolds = " << cfg.tstr.folds << "\nridge_lambda = " << cfg.tstr.ridge_lambda
       << "\nconditions = ";
    for (size_t i = 0; i < cfg.tstr.conditions.size(); ++i)
        os << (i ? "," : "") << cfg.tstr.conditions[i];
    os << "\npredictors = ";
    for (size_t i = 0; i < cfg.tstr.predictors.size(); ++i)
        os << (i ? "," : "") << cfg.tstr.predictors[i];
    os << "\n\n[privacy]\nper_class = " << (cfg.privacy_per_class ? "true" : "false") << "\n";
}

// ---- full pipeline ----------------------------------------------------------------------------

EvalArtifacts run_full_evaluation(const EvalConfig& cfg) {
    EvalArtifacts art;

    auto g = simulate_genotypes(cfg.sim, derive_seed(cfg.seed, "sim_geno"));
    auto sim = simulate_phenotype(g, cfg.arch, cfg.prevalence, derive_seed(cfg.seed, "sim_pheno"));
    art.arch = sim.arch;

    const auto split =
        grouped_stratified_split(g, sim.phenotype, cfg.fractions, derive_seed(cfg.seed, "split"));
    auto take = [&](SplitSet s, GenotypeMatrix& gm, PhenotypeVector& ym) {
        const auto idx = split.indices(s);
        gm = g.subset_rows(idx);
        ym.trait = sim.phenotype.trait;
        ym.labels.clear();
        for (const auto i : idx) ym.labels.push_back(sim.phenotype.labels[static_cast<size_t>(i)]);
    };
    take(SplitSet::train, art.train_g, art.train_y);
    take(SplitSet::val, art.val_g, art.val_y);
    take(SplitSet::test, art.test_g, art.test_y);

    std::vector<double> ext_betas(static_cast<size_t>(g.l()));
    for (int64_t j = 0; j < g.l(); ++j) {
        const auto ju = static_cast<size_t>(j);
        // true effects converted back to the raw-dosage scale
        ext_betas[ju] = sim.arch.betas[ju] / sim.arch.col_std[ju];
    }

    if (cfg.do_select) {
        auto gw = gwas_univariate(art.train_g, art.train_y);
        auto panel = ld_clump(gw, art.train_g, cfg.window_bp, cfg.r2_threshold);
        if (cfg.top_l > 0) panel = select_top_l(panel, cfg.top_l);
        std::vector<int64_t> cols = panel.indices;
        std::sort(cols.begin(), cols.end());
        art.train_g = art.train_g.subset_cols(cols);
        art.val_g = art.val_g.subset_cols(cols);
        art.test_g = art.test_g.subset_cols(cols);
        std::vector<double> eb, ab, cs, cm;
        for (const auto c : cols) {
            eb.push_back(ext_betas[static_cast<size_t>(c)]);
            ab.push_back(art.arch.betas[static_cast<size_t>(c)]);
            cs.push_back(art.arch.col_std[static_cast<size_t>(c)]);
            cm.push_back(art.arch.col_mean[static_cast<size_t>(c)]);
        }
        ext_betas = std::move(eb);
        art.arch.betas = std::move(ab);
        art.arch.col_std = std::move(cs);
        art.arch.col_mean = std::move(cm);
    }
    const int64_t seq_len = art.train_g.l();

    VaeConfig vc =
        cfg.vae_preset == "paper" ? VaeConfig::paper(seq_len) : VaeConfig::desk(seq_len);
    if (cfg.vae_epochs >= 0) vc.epochs = cfg.vae_epochs;
    auto vres = train_vae(art.train_g, art.val_g, vc, derive_seed(cfg.seed, "vae"));
    if (vres.aborted_nan) std::cerr << "pipeline: VAE training aborted on non-finite loss\n";
    art.vae = std::move(vres.model);
    art.recon_g = reconstruct(art.vae, art.train_g, derive_seed(cfg.seed, "recon"));
    art.recon_accuracy = reconstruction_accuracy(art.train_g, art.recon_g);

    auto to_labels = [](const PhenotypeVector& y) {
        return std::vector<int64_t>(y.labels.begin(), y.labels.end());
    };
    const auto lat_train = encode_latents(art.vae, art.train_g, derive_seed(cfg.seed, "lat_train"));
    const auto lat_val = encode_latents(art.vae, art.val_g, derive_seed(cfg.seed, "lat_val"));
    LdmConfig lc = cfg.ldm_preset == "paper" ? LdmConfig::paper() : LdmConfig::desk();
    if (cfg.ldm_epochs >= 0) lc.epochs = cfg.ldm_epochs;
    auto lres = train_ldm(lat_train, to_labels(art.train_y), lat_val, to_labels(art.val_y), lc,
                          derive_seed(cfg.seed, "ldm"));
    if (lres.aborted_nan) std::cerr << "pipeline: LDM training aborted on non-finite loss\n";
    art.ldm = std::move(lres.model);

    SamplerConfig sc;
    sc.steps = cfg.sample_steps;
    sc.guidance = cfg.guidance;
    art.matched = generate_cohort(art.vae, art.ldm, sc, matched_counts(art.ldm),
                                  art.train_g.variants(), art.train_g.snp_ids(),
                                  derive_seed(cfg.seed, "gen_matched"));
    art.augmented = generate_cohort(art.vae, art.ldm, sc, augmented_counts(art.ldm),
                                    art.train_g.variants(), art.train_g.snp_ids(),
                                    derive_seed(cfg.seed, "gen_augmented"));

    std::vector<ConditionData> conds;
    conds.push_back({"real", art.train_g, art.train_y});
    conds.push_back({"reconstructed", art.recon_g, art.train_y});
    conds.push_back({"synthetic_matched", art.matched.genotypes, art.matched.phenotype});
    conds.push_back({"synthetic_augmented", art.augmented.genotypes, art.augmented.phenotype});
    TstrConfig tc = cfg.tstr;
    tc.seed = derive_seed(cfg.seed, "tstr");
    art.tstr = run_tstr(conds, art.test_g, art.test_y, ext_betas, tc);

    const auto gw_real = gwas_univariate(art.train_g, art.train_y);
    const auto gw_recon = gwas_univariate(art.recon_g, art.train_y);
    const auto gw_synth = gwas_univariate(art.matched.genotypes, art.matched.phenotype);
    art.betas = beta_correlation(gw_real, gw_recon, gw_synth);

    const uint64_t pseed = derive_seed(cfg.seed, "privacy");
    {
        PrivacyInputs in{art.train_g, art.test_g, art.recon_g};
        auto rows = privacy_report(in, "reconstructed", cfg.privacy_per_class, art.train_y,
                                   art.test_y, art.train_y, pseed);
        art.privacy.insert(art.privacy.end(), rows.begin(), rows.end());
    }
    {
        PrivacyInputs in{art.train_g, art.test_g, art.matched.genotypes};
        auto rows = privacy_report(in, "synthetic", cfg.privacy_per_class, art.train_y, art.test_y,
                                   art.matched.phenotype, pseed);
        art.privacy.insert(art.privacy.end(), rows.begin(), rows.end());
    }

    std::vector<LdSection> ld;
    ld.push_back({"original", ld_decay(art.train_g)});
    ld.push_back({"reconstructed", ld_decay(art.recon_g)});
    ld.push_back({"synthetic", ld_decay(art.matched.genotypes)});

    art.report = assemble_report(art.tstr, art.privacy, ld, art.betas);
    art.report["seed"] = cfg.seed;
    art.report["trait"] = art.train_y.trait;
    art.report["reconstruction_accuracy"] = art.recon_accuracy;
    {
        std::ostringstream cs;
        cs << std::hex << art.test_g.checksum();
        art.report["test_checksum"] = cs.str();
    }
    if (!cfg.deterministic) {
        const auto now = std::chrono::system_clock::now().time_since_epoch();
        art.report["generated_at"] =
            std::chrono::duration_cast<std::chrono::seconds>(now).count();
    }

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        const auto base = std::filesystem::path(cfg.out_dir);
        {
            std::ofstream os(base / "report.json");
            os << art.report.dump(2) << "\n";
        }
        write_tstr_tsv((base / "tstr.tsv").string(), art.tstr);
        write_privacy_tsv((base / "privacy.tsv").string(), art.privacy);
        write_decay_tsv((base / "ld_decay.tsv").string(), ld[2].curve);
        write_betas_tsv((base / "betas.tsv").string(), gw_real, gw_recon, gw_synth);
        write_resolved_config(cfg, (base / "resolved_config.ini").string());
    }
    return art;
}

} // namespace snpforge
