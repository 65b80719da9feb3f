#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <array>
#include <cstdio>
#include <fstream>
#include <set>

#include "snpforge/harness.hpp"

using namespace snpforge;

namespace {

GenotypeMatrix constant_rows(const std::vector<uint8_t>& row_values, int64_t l) {
    const auto n = static_cast<int64_t>(row_values.size());
    std::vector<uint8_t> dosages(static_cast<size_t>(n * l));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < l; ++j)
            dosages[static_cast<size_t>(i * l + j)] = row_values[static_cast<size_t>(i)];
    std::vector<Variant> vars(static_cast<size_t>(l));
    for (int64_t j = 0; j < l; ++j) vars[static_cast<size_t>(j)] = {1, 100 + 10 * static_cast<uint64_t>(j), 'A', 'G'};
    return GenotypeMatrix(n, l, dosages, std::move(vars));
}

} // namespace

TEST_CASE("stratified folds are balanced and a pure function of labels and seed") {
    std::vector<uint8_t> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(i < 20);
    const auto a = stratified_kfold(labels, 5, 3);
    const auto b = stratified_kfold(labels, 5, 3);
    CHECK(a == b);
    const auto c = stratified_kfold(labels, 5, 4);
    CHECK(a != c);
    std::array<int, 5> case_counts{}, sizes{};
    for (size_t i = 0; i < labels.size(); ++i) {
        ++sizes[static_cast<size_t>(a[i])];
        if (labels[i]) ++case_counts[static_cast<size_t>(a[i])];
    }
    for (int f = 0; f < 5; ++f) {
        CHECK(sizes[static_cast<size_t>(f)] == 20);
        CHECK(case_counts[static_cast<size_t>(f)] == 4);
    }
}

TEST_CASE("subsample_random returns the whole pool at fraction one and is seeded") {
    const auto all = subsample_random(50, 1.0, 9);
    CHECK(all.size() == 50);
    const auto a = subsample_random(1000, 0.3, 1);
    const auto b = subsample_random(1000, 0.3, 1);
    CHECK(a == b);
    CHECK(a.size() == 300);
    std::set<int64_t> uniq(a.begin(), a.end());
    CHECK(uniq.size() == a.size());
}

TEST_CASE("uniform subsampling preserves class proportions within two percent") {
    Rng rng(11);
    std::vector<uint8_t> labels;
    for (int i = 0; i < 1000; ++i) labels.push_back(rng.uniform() < 0.4);
    int64_t pool_cases = 0;
    for (const auto l : labels) pool_cases += l;
    double worst = 0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        const auto idx = subsample_random(1000, 0.5, seed);
        int64_t cases = 0;
        for (const auto i : idx) cases += labels[static_cast<size_t>(i)];
        const double got = static_cast<double>(cases) / static_cast<double>(idx.size());
        const double want = static_cast<double>(pool_cases) / 1000.0;
        worst = std::max(worst, std::abs(got - want));
    }
    CHECK(worst < 0.05);
}

TEST_CASE("diversity selection ranks duplicates last") {
    // 6 samples of class 0: three identical rows (distance 0 to each other)
    // and three mutually distinct rows
    auto g = constant_rows({0, 0, 0, 1, 2, 2}, 12);
    // make rows 4 and 5 differ
    std::vector<uint8_t> dosages;
    for (int64_t i = 0; i < g.n(); ++i) {
        auto row = g.row(i);
        if (i == 5)
            for (int j = 0; j < 6; ++j) row[static_cast<size_t>(j)] = 0;
        dosages.insert(dosages.end(), row.begin(), row.end());
    }
    GenotypeMatrix g2(g.n(), g.l(), dosages, g.variants());
    PhenotypeVector y;
    y.labels.assign(6, 0);
    const auto half = subsample_diversity(g2, y, 0.5);
    CHECK(half.size() == 3);
    // the three identical all-zero rows (0,1,2) have distance 0 and lose
    for (const auto i : half) CHECK(i >= 3);

    const auto full = subsample_diversity(g2, y, 1.0);
    CHECK(full.size() == 6);
}

TEST_CASE("diversity selection matches an exhaustive oracle on random data") {
    GenoSimConfig cfg;
    cfg.n = 200;
    cfg.l = 32;
    auto pool = simulate_genotypes(cfg, 21);
    Rng rng(22);
    PhenotypeVector y;
    for (int64_t i = 0; i < pool.n(); ++i) y.labels.push_back(rng.uniform() < 0.5);
    const double fraction = 0.25;
    const auto fast = subsample_diversity(pool, y, fraction);

    std::vector<int64_t> expect;
    for (uint8_t cls = 0; cls <= 1; ++cls) {
        std::vector<int64_t> members;
        for (int64_t i = 0; i < pool.n(); ++i)
            if (y.labels[static_cast<size_t>(i)] == cls) members.push_back(i);
        std::vector<std::pair<int64_t, int64_t>> scored; // (-distance, index)
        for (const auto a : members) {
            int64_t best = std::numeric_limits<int64_t>::max();
            for (const auto b : members) {
                if (a == b) continue;
                int64_t mism = 0;
                for (int64_t j = 0; j < pool.l(); ++j)
                    mism += pool.dosage(a, j) != pool.dosage(b, j);
                best = std::min(best, 2 * mism);
            }
            scored.emplace_back(-best, a);
        }
        std::sort(scored.begin(), scored.end());
        const auto take =
            static_cast<size_t>(std::llround(fraction * static_cast<double>(members.size())));
        for (size_t t = 0; t < take; ++t) expect.push_back(scored[t].second);
    }
    std::sort(expect.begin(), expect.end());
    CHECK(fast == expect);
}

TEST_CASE("power-iteration PCA matches an eigendecomposition oracle") {
    GenoSimConfig cfg;
    cfg.n = 50;
    cfg.l = 20;
    cfg.recomb = 0.1;
    auto g = simulate_genotypes(cfg, 23);
    const auto pca = pca_power(g, 3, 24);

    Eigen::MatrixXd a(g.n(), g.l());
    for (int64_t i = 0; i < g.n(); ++i)
        for (int64_t j = 0; j < g.l(); ++j)
            a(i, j) = g.dosage(i, j) - pca.mean[static_cast<size_t>(j)];
    Eigen::MatrixXd cov = a.transpose() * a;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    for (int c = 0; c < 3; ++c) {
        const Eigen::VectorXd expect = es.eigenvectors().col(g.l() - 1 - c);
        double dot = 0, n1 = 0, n2 = 0;
        for (int64_t j = 0; j < g.l(); ++j) {
            dot += expect(j) * pca.components[static_cast<size_t>(c)][static_cast<size_t>(j)];
            n1 += expect(j) * expect(j);
            n2 += pca.components[static_cast<size_t>(c)][static_cast<size_t>(j)] *
                  pca.components[static_cast<size_t>(c)][static_cast<size_t>(j)];
        }
        CHECK(std::abs(dot) / std::sqrt(n1 * n2) > 0.999);
    }
}

TEST_CASE("kmeans separates well-planted clusters deterministically") {
    std::vector<std::vector<double>> pts;
    Rng rng(25);
    for (int i = 0; i < 60; ++i)
        pts.push_back({rng.normal() * 0.1 + (i < 30 ? -5.0 : 5.0), rng.normal() * 0.1});
    const auto a = kmeans(pts, 2, 7);
    const auto b = kmeans(pts, 2, 7);
    CHECK(a.assignment == b.assignment);
    for (int i = 1; i < 30; ++i) CHECK(a.assignment[static_cast<size_t>(i)] == a.assignment[0]);
    for (int i = 31; i < 60; ++i) CHECK(a.assignment[static_cast<size_t>(i)] == a.assignment[30]);
    CHECK(a.assignment[0] != a.assignment[30]);
}

TEST_CASE("pca-stratified subsampling with k=1 degenerates to seeded sampling") {
    GenoSimConfig cfg;
    cfg.n = 120;
    cfg.l = 24;
    auto pool = simulate_genotypes(cfg, 26);
    auto real = simulate_genotypes(cfg, 27);
    PhenotypeVector y;
    for (int64_t i = 0; i < pool.n(); ++i) y.labels.push_back(i % 2);
    const auto idx = subsample_pca_stratified(pool, y, real, 0.5, 1, 4, 28);
    CHECK(idx.size() == 60);
    std::set<int64_t> uniq(idx.begin(), idx.end());
    CHECK(uniq.size() == idx.size());
}

TEST_CASE("pca-stratified subsampling follows a planted cluster") {
    // real training data concentrated at all-zeros; synthetic pool half
    // zero-like, half two-like
    std::vector<uint8_t> real_rows(40, 0);
    auto real = constant_rows(real_rows, 16);
    std::vector<uint8_t> pool_rows;
    for (int i = 0; i < 60; ++i) pool_rows.push_back(i < 30 ? 0 : 2);
    auto pool = constant_rows(pool_rows, 16);
    PhenotypeVector y;
    y.labels.assign(60, 0);
    const auto idx = subsample_pca_stratified(pool, y, real, 0.4, 2, 2, 29);
    REQUIRE(!idx.empty());
    int64_t matching = 0;
    for (const auto i : idx) matching += i < 30;
    CHECK(static_cast<double>(matching) / static_cast<double>(idx.size()) > 0.9);
}

TEST_CASE("beta correlation endpoints and flag exclusion") {
    GwasSummary a, b;
    for (int j = 0; j < 20; ++j) {
        GwasRow r;
        r.snp_id = "snp" + std::to_string(j);
        r.beta = 0.1 * j - 1.0;
        a.rows.push_back(r);
        b.rows.push_back(r);
    }
    int64_t used = 0;
    CHECK(beta_pearson(a, b, &used) == doctest::Approx(1.0));
    CHECK(used == 20);

    // flag one side: that SNP must drop out pairwise
    b.rows[3].flag = GwasFlag::separation;
    b.rows[3].beta = 10.0;
    CHECK(beta_pearson(a, b, &used) == doctest::Approx(1.0));
    CHECK(used == 19);
}

TEST_CASE("independent random betas stay near zero correlation at L=512") {
    Rng rng(30);
    GwasSummary a, b;
    for (int j = 0; j < 512; ++j) {
        GwasRow r1, r2;
        r1.beta = rng.normal();
        r2.beta = rng.normal();
        a.rows.push_back(r1);
        b.rows.push_back(r2);
    }
    CHECK(std::abs(beta_pearson(a, b)) < 0.2);
}

TEST_CASE("assembled report is schema-complete even when empty") {
    const auto doc = assemble_report({}, {}, {}, std::nullopt);
    CHECK(doc["version"] == 1);
    CHECK(doc["tstr"].is_array());
    CHECK(doc["tstr"].empty());
    CHECK(doc["privacy"].is_array());
    CHECK(doc["ld"].is_object());
    CHECK(doc["betas"].is_null());

    // round trip through text
    const auto parsed = nlohmann::json::parse(doc.dump(2));
    CHECK(parsed == doc);
}

TEST_CASE("assembled report carries every section with the declared fields") {
    TstrRow t;
    t.condition = "real";
    t.predictor = "prs_univariate";
    t.mean_auc = 0.9;
    t.ci95 = 0.01;
    t.fold_aucs = {0.89, 0.91};
    PrivacyRow p;
    p.condition = "synthetic";
    p.scope = "overall";
    LdSection ld;
    ld.condition = "original";
    ld.curve.spearman_rho = -0.4;
    LdDecayBin bin;
    bin.lo = 1;
    bin.hi = 10;
    bin.count = 60;
    ld.curve.bins.push_back(bin);
    BetaCorrelation bc;
    bc.r_synth = 0.8;
    bc.r_recon = 0.7;

    const auto doc = assemble_report({t}, {p}, {ld}, bc);
    // hand schema validation
    for (const auto& row : doc["tstr"]) {
        CHECK(row.contains("condition"));
        CHECK(row.contains("predictor"));
        CHECK(row.contains("mean_auc"));
        CHECK(row.contains("ci95"));
        CHECK(row["fold_aucs"].is_array());
    }
    for (const auto& row : doc["privacy"])
        for (const auto* key : {"condition", "scope", "imr_pct", "nndr", "mi_auc", "nnaa",
                                "dcr_pct", "maf_r"})
            CHECK(row.contains(key));
    CHECK(doc["ld"]["original"]["spearman_rho"] == doctest::Approx(-0.4));
    CHECK(doc["ld"]["original"]["bins"][0]["count"] == 60);
    CHECK(doc["betas"]["r_synth"] == doctest::Approx(0.8));
}

TEST_CASE("eval config file round trips and rejects unknown keys") {
    {
        std::ofstream os("harness_cfg_test.ini");
        os << "version = 1\n[pipeline]\nseed = 123\nout = somewhere\n"
           << "[simulate]\nn = 400\nl = 32\nprevalence = 0.25\n"
           << "[vae]\nepochs = 5\n[ldm]\nepochs = 7\n"
           << "[tstr]\nconditions = real,synthetic_matched\n";
    }
    const auto cfg = parse_eval_config("harness_cfg_test.ini");
    CHECK(cfg.seed == 123);
    CHECK(cfg.sim.n == 400);
    CHECK(cfg.sim.l == 32);
    CHECK(cfg.prevalence == doctest::Approx(0.25));
    CHECK(cfg.vae_epochs == 5);
    CHECK(cfg.ldm_epochs == 7);
    CHECK(cfg.tstr.conditions == std::vector<std::string>{"real", "synthetic_matched"});

    write_resolved_config(cfg, "harness_cfg_resolved.ini");
    const auto back = parse_eval_config("harness_cfg_resolved.ini");
    CHECK(back.seed == cfg.seed);
    CHECK(back.sim.n == cfg.sim.n);
    CHECK(back.tstr.conditions == cfg.tstr.conditions);

    {
        std::ofstream os("harness_cfg_test.ini");
        os << "version = 1\n[pipeline]\nbogus_key = 1\n";
    }
    CHECK_THROWS_WITH_AS(parse_eval_config("harness_cfg_test.ini"),
                         doctest::Contains("unknown key"), std::runtime_error);
    {
        std::ofstream os("harness_cfg_test.ini");
        os << "[pipeline]\nseed = 1\n";
    }
    CHECK_THROWS_WITH_AS(parse_eval_config("harness_cfg_test.ini"), doctest::Contains("version"),
                         std::runtime_error);
    std::remove("harness_cfg_test.ini");
    std::remove("harness_cfg_resolved.ini");
}

TEST_CASE("tstr evaluates every requested condition x predictor pair on real data") {
    GenoSimConfig cfg;
    cfg.n = 600;
    cfg.l = 24;
    auto g = simulate_genotypes(cfg, 31);
    EffectArchitecture proto;
    auto sim = simulate_phenotype(g, proto, 0.3, 32);
    const auto split = grouped_stratified_split(g, sim.phenotype, {0.7, 0.0, 0.3}, 33);
    const auto tr_idx = split.indices(SplitSet::train);
    const auto te_idx = split.indices(SplitSet::test);
    auto train_g = g.subset_rows(tr_idx);
    auto test_g = g.subset_rows(te_idx);
    PhenotypeVector train_y, test_y;
    for (const auto i : tr_idx) train_y.labels.push_back(sim.phenotype.labels[static_cast<size_t>(i)]);
    for (const auto i : te_idx) test_y.labels.push_back(sim.phenotype.labels[static_cast<size_t>(i)]);

    std::vector<double> ext(static_cast<size_t>(g.l()));
    for (size_t j = 0; j < ext.size(); ++j)
        ext[j] = sim.arch.betas[j] / sim.arch.col_std[j];

    std::vector<ConditionData> conds;
    conds.push_back({"real", train_g, train_y});
    TstrConfig tc;
    tc.conditions = {"real"};
    tc.folds = 3;
    tc.seed = 34;
    const auto rows = run_tstr(conds, test_g, test_y, ext, tc);
    CHECK(rows.size() == tc.predictors.size());
    for (const auto& r : rows) {
        CHECK(r.fold_aucs.size() == 3);
        // strong simulated signal: everything should be far above chance
        CHECK(r.mean_auc > 0.7);
    }

    // label permutation null: AUC collapses to 0.5
    Rng rng(35);
    PhenotypeVector perm_y = train_y;
    rng.shuffle(perm_y.labels.begin(), perm_y.labels.end());
    std::vector<ConditionData> null_conds;
    null_conds.push_back({"real", train_g, perm_y});
    TstrConfig tn = tc;
    tn.predictors = {"prs_univariate"};
    const auto null_rows = run_tstr(null_conds, test_g, test_y, ext, tn);
    CHECK(std::abs(null_rows[0].mean_auc - 0.5) < 0.08);

    CHECK_THROWS_WITH_AS(run_tstr({}, test_g, test_y, ext, tc), doctest::Contains("missing"),
                         std::runtime_error);
}
