#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "snpforge/harness.hpp"

using namespace snpforge;

namespace {

uint64_t default_seed() {
    if (const char* s = std::getenv("SNPFORGE_SEED")) return std::stoull(s);
    return 7;
}

void cmd_simulate(const GenoSimConfig& sim, double prevalence, bool standardize, uint64_t seed,
                  const std::string& out) {
    auto g = simulate_genotypes(sim, derive_seed(seed, "sim_geno"));
    EffectArchitecture proto;
    proto.standardize = standardize;
    auto ph = simulate_phenotype(g, proto, prevalence, derive_seed(seed, "sim_pheno"));
    write_gpack(out, g, ph.phenotype);
    write_effects_tsv(out + ".effects.tsv", g, ph.arch);
    std::cout << "simulated " << g.n() << " x " << g.l() << " genotypes, prevalence "
              << ph.achieved_prevalence << " -> " << out << ".gpack\n";
}

void cmd_select(const std::string& genotypes, const std::string& gwas_in, uint64_t window_kb,
                double r2, int64_t top_l, const std::string& out, const std::string& gwas_out) {
    const auto cohort = read_gpack(genotypes);
    GwasSummary summary;
    if (!gwas_in.empty()) {
        summary = read_gwas_tsv(gwas_in);
        if (summary.rows.size() != static_cast<size_t>(cohort.genotypes.l()))
            throw std::runtime_error("select: GWAS summary covers " +
                                     std::to_string(summary.rows.size()) + " SNPs, panel has " +
                                     std::to_string(cohort.genotypes.l()));
    } else {
        if (!cohort.phenotype)
            throw std::runtime_error("select: no --gwas given and no labels in the gpack");
        summary = gwas_univariate(cohort.genotypes, *cohort.phenotype);
    }
    if (!gwas_out.empty()) write_gwas_tsv(gwas_out, summary);
    auto panel = ld_clump(summary, cohort.genotypes, window_kb * 1000, r2);
    if (top_l > 0) panel = select_top_l(panel, top_l);
    write_panel(out, panel, cohort.genotypes);
    std::cout << "retained " << panel.indices.size() << " SNPs -> " << out << "\n";
}

void cmd_train_vae(const std::string& data, const std::string& preset, int epochs, uint64_t seed,
                   const std::string& out) {
    const auto cohort = read_gpack(data);
    if (!cohort.phenotype) throw std::runtime_error("train-vae: gpack has no phenotype labels");
    const auto& g = cohort.genotypes;
    const auto split = grouped_stratified_split(g, *cohort.phenotype, {0.8, 0.2, 0.0},
                                                derive_seed(seed, "cli_vae_split"));
    const auto tr_idx = split.indices(SplitSet::train);
    const auto va_idx = split.indices(SplitSet::val);
    const auto train_g = g.subset_rows(tr_idx);
    const auto val_g = g.subset_rows(va_idx);

    VaeConfig vc = preset == "paper" ? VaeConfig::paper(g.l()) : VaeConfig::desk(g.l());
    if (epochs >= 0) vc.epochs = epochs;
    auto res = train_vae(train_g, val_g, vc, seed);
    save_vae(res.model, g, out);
    write_vae_history(out + ".history.tsv", res.history);

    LatentDataset lat;
    lat.train_latents = encode_latents(res.model, train_g, derive_seed(seed, "lat_train"));
    lat.val_latents = encode_latents(res.model, val_g, derive_seed(seed, "lat_val"));
    for (const auto i : tr_idx)
        lat.train_labels.push_back(cohort.phenotype->labels[static_cast<size_t>(i)]);
    for (const auto i : va_idx)
        lat.val_labels.push_back(cohort.phenotype->labels[static_cast<size_t>(i)]);
    save_latents(lat, out + ".latents.snpf");
    std::cout << "trained VAE (best val acc " << res.best_val_acc << ") -> " << out << "\n";
}

void cmd_train_ldm(const std::string& latents, const std::string& labels_tsv,
                   const std::string& preset, int epochs, uint64_t seed, const std::string& out) {
    auto lat = load_latents(latents);
    if (!labels_tsv.empty()) {
        std::ifstream is(labels_tsv);
        if (!is) throw std::runtime_error("train-ldm: cannot open '" + labels_tsv + "'");
        std::vector<int64_t> all;
        std::string line;
        bool header_seen = false;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            if (!header_seen) {
                header_seen = true;
                continue;
            }
            const auto tab = line.rfind('\t');
            all.push_back(std::stoll(line.substr(tab + 1)));
        }
        const auto nt = lat.train_labels.size();
        const auto nv = lat.val_labels.size();
        if (all.size() != nt + nv)
            throw std::runtime_error("train-ldm: label override row count mismatch");
        lat.train_labels.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(nt));
        lat.val_labels.assign(all.begin() + static_cast<std::ptrdiff_t>(nt), all.end());
    }
    LdmConfig lc = preset == "paper" ? LdmConfig::paper() : LdmConfig::desk();
    if (epochs >= 0) lc.epochs = epochs;
    auto res = train_ldm(lat.train_latents, lat.train_labels, lat.val_latents, lat.val_labels, lc,
                         seed);
    save_ldm(res.model, out);
    write_ldm_history(out + ".history.tsv", res.history);
    std::cout << "trained LDM (best val loss " << res.best_val_loss << ") -> " << out << "\n";
}

void cmd_generate(const std::string& vae_path, const std::string& ldm_path,
                  const std::string& mode, double guidance, int steps, int64_t cases,
                  int64_t controls, uint64_t seed, const std::string& out) {
    auto vae = load_vae(vae_path);
    auto ldm = load_ldm(ldm_path);
    std::map<int, int64_t> counts;
    if (cases >= 0 || controls >= 0) {
        counts[0] = std::max<int64_t>(0, controls);
        counts[1] = std::max<int64_t>(0, cases);
    } else if (mode == "matched") {
        counts = matched_counts(ldm);
    } else if (mode == "augmented") {
        counts = augmented_counts(ldm);
    } else {
        throw std::runtime_error("generate: unknown mode '" + mode + "'");
    }
    SamplerConfig sc;
    sc.steps = steps;
    sc.guidance = guidance;
    auto cohort = generate_cohort(vae.model, ldm, sc, counts, vae.variants, vae.snp_ids, seed);
    write_gpack(out, cohort.genotypes, cohort.phenotype);
    std::cout << "generated " << cohort.genotypes.n() << " samples -> " << out << ".gpack\n";
}

void cmd_privacy(const std::string& train, const std::string& holdout, const std::string& synth,
                 const std::string& condition, bool per_class, uint64_t seed,
                 const std::string& out) {
    const auto tr = read_gpack(train);
    const auto ho = read_gpack(holdout);
    const auto sy = read_gpack(synth);
    PrivacyInputs in{tr.genotypes, ho.genotypes, sy.genotypes};
    std::vector<PrivacyRow> rows;
    if (per_class) {
        if (!tr.phenotype || !ho.phenotype || !sy.phenotype)
            throw std::runtime_error("privacy: --per-class needs labels on all three cohorts");
        rows = privacy_report(in, condition, true, *tr.phenotype, *ho.phenotype, *sy.phenotype,
                              seed);
    } else {
        rows.push_back(privacy_overall(in, condition, seed));
    }
    write_privacy_tsv(out + ".tsv", rows);
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& r : rows)
        doc.push_back({{"condition", r.condition},
                       {"scope", r.scope},
                       {"imr_pct", r.imr_pct},
                       {"nndr", r.nndr},
                       {"mi_auc", r.mi_auc},
                       {"nnaa", r.nnaa},
                       {"dcr_pct", r.dcr_pct},
                       {"maf_r", r.maf_r}});
    std::ofstream os(out + ".json");
    os << doc.dump(2) << "\n";
    std::cout << "privacy report -> " << out << ".json\n";
}

void cmd_ld(const std::string& genotypes, bool decay, const std::string& condition,
            const std::string& out) {
    const auto cohort = read_gpack(genotypes);
    const auto m = pairwise_r2(cohort.genotypes);
    write_r2_grid(out + ".r2.bin", m);
    if (decay) {
        const auto curve = ld_decay(cohort.genotypes);
        write_decay_tsv(out + ".ld_decay.tsv", curve);
        nlohmann::json doc;
        nlohmann::json bins = nlohmann::json::array();
        for (const auto& b : curve.bins)
            bins.push_back({{"lo", b.lo},
                            {"hi", b.hi},
                            {"mean_r2", b.mean_r2},
                            {"sem", b.sem},
                            {"count", b.count}});
        doc[condition] = {{"spearman_rho", curve.spearman_rho},
                          {"same_chrom_fraction", curve.same_chrom_fraction},
                          {"missing_r2_fraction", curve.missing_r2_fraction},
                          {"valid_pairs", curve.valid_pairs},
                          {"bins", bins}};
        std::ofstream os(out + ".ld.json");
        os << doc.dump(2) << "\n";
    }
    std::cout << "ld outputs -> " << out << ".r2.bin\n";
}

void cmd_evaluate(const std::string& config_path, const std::string& out_override,
                  int64_t seed_override, bool deterministic) {
    EvalConfig cfg = parse_eval_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    if (deterministic) cfg.deterministic = true;
    auto art = run_full_evaluation(cfg);
    std::cout << "evaluation complete -> " << cfg.out_dir << "/report.json\n";
}

void cmd_report(const std::string& tstr, const std::string& privacy, const std::string& ld,
                const std::string& betas, const std::string& out) {
    auto load = [](const std::string& path) -> nlohmann::json {
        if (path.empty()) return nullptr;
        std::ifstream is(path);
        if (!is) throw std::runtime_error("report: cannot open '" + path + "'");
        return nlohmann::json::parse(is);
    };
    nlohmann::json doc;
    doc["version"] = 1;
    const auto t = load(tstr);
    const auto p = load(privacy);
    const auto l = load(ld);
    const auto b = load(betas);
    doc["tstr"] = t.is_null() ? nlohmann::json::array() : t;
    doc["privacy"] = p.is_null() ? nlohmann::json::array() : p;
    doc["ld"] = l.is_null() ? nlohmann::json::object() : l;
    doc["betas"] = b;
    std::ofstream os(out);
    if (!os) throw std::runtime_error("report: cannot open '" + out + "' for writing");
    os << doc.dump(2) << "\n";
    std::cout << "report -> " << out << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"snpforge: phenotype-conditioned synthetic genotype pipeline"};
    app.require_subcommand(1);
    int workers = 1;
    app.add_option("--workers", workers, "parallelism bound (default 1 for reproducibility)");

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "simulate a block-LD cohort with labels");
    GenoSimConfig sim;
    double prevalence = 0.3;
    bool no_standardize = false;
    uint64_t sim_seed = default_seed();
    std::string sim_out;
    sim_cmd->add_option("--n", sim.n, "individuals");
    sim_cmd->add_option("--l", sim.l, "SNP count");
    sim_cmd->add_option("--blocks", sim.blocks, "LD blocks");
    sim_cmd->add_option("--founders", sim.founders, "founder haplotypes per block");
    sim_cmd->add_option("--recomb", sim.recomb, "per-SNP founder switch probability");
    sim_cmd->add_option("--maf-lo", sim.maf_lo, "minimum target allele frequency");
    sim_cmd->add_option("--maf-hi", sim.maf_hi, "maximum target allele frequency");
    sim_cmd->add_option("--prevalence", prevalence, "target case fraction");
    sim_cmd->add_flag("--raw-dosage-liability", no_standardize,
                      "skip dosage standardization in the liability term");
    sim_cmd->add_option("--seed", sim_seed, "random seed (SNPFORGE_SEED fallback)");
    sim_cmd->add_option("--out", sim_out, "output stem")->required();

    // select
    auto* sel_cmd = app.add_subcommand("select", "GWAS-ranked LD clumping panel selection");
    std::string sel_geno, sel_gwas, sel_out, sel_gwas_out;
    uint64_t window_kb = 10;
    double sel_r2 = 0.5;
    int64_t top_l = 0;
    sel_cmd->add_option("--genotypes", sel_geno, "gpack stem")->required();
    sel_cmd->add_option("--gwas", sel_gwas, "GWAS summary TSV (computed from labels when absent)");
    sel_cmd->add_option("--window-kb", window_kb, "clumping window in kb");
    sel_cmd->add_option("--r2", sel_r2, "r^2 pruning threshold");
    sel_cmd->add_option("--top-l", top_l, "keep the top L SNPs by p-value (0 = all)");
    sel_cmd->add_option("--out", sel_out, "panel file")->required();
    sel_cmd->add_option("--gwas-out", sel_gwas_out, "write the GWAS summary TSV here");

    // train-vae
    auto* vae_cmd = app.add_subcommand("train-vae", "train the stage-1 autoencoder");
    std::string vae_data, vae_preset = "desk", vae_out;
    int vae_epochs = -1;
    uint64_t vae_seed = default_seed();
    vae_cmd->add_option("--data", vae_data, "gpack stem with labels")->required();
    vae_cmd->add_option("--preset", vae_preset, "desk|paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    vae_cmd->add_option("--epochs", vae_epochs, "override preset epoch count");
    vae_cmd->add_option("--seed", vae_seed, "random seed");
    vae_cmd->add_option("--out", vae_out, "model output path (.snpf)")->required();

    // train-ldm
    auto* ldm_cmd = app.add_subcommand("train-ldm", "train the stage-2 latent diffusion model");
    std::string ldm_latents, ldm_labels, ldm_preset = "desk", ldm_out;
    int ldm_epochs = -1;
    uint64_t ldm_seed = default_seed();
    ldm_cmd->add_option("--latents", ldm_latents, "latents container from train-vae")->required();
    ldm_cmd->add_option("--labels", ldm_labels, "optional samples.tsv overriding labels");
    ldm_cmd->add_option("--preset", ldm_preset, "desk|paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    ldm_cmd->add_option("--epochs", ldm_epochs, "override preset epoch count");
    ldm_cmd->add_option("--seed", ldm_seed, "random seed");
    ldm_cmd->add_option("--out", ldm_out, "model output path (.snpf)")->required();

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "sample a synthetic cohort");
    std::string gen_vae, gen_ldm, gen_mode = "matched", gen_out;
    double guidance = 5.0;
    int steps = 50;
    int64_t gen_cases = -1, gen_controls = -1;
    uint64_t gen_seed = default_seed();
    gen_cmd->add_option("--vae", gen_vae, "VAE checkpoint")->required();
    gen_cmd->add_option("--ldm", gen_ldm, "LDM checkpoint")->required();
    gen_cmd->add_option("--mode", gen_mode, "matched|augmented")
        ->check(CLI::IsMember({"matched", "augmented"}));
    gen_cmd->add_option("--guidance", guidance, "classifier-free guidance scale");
    gen_cmd->add_option("--steps", steps, "denoising steps");
    gen_cmd->add_option("--cases", gen_cases, "override case count");
    gen_cmd->add_option("--controls", gen_controls, "override control count");
    gen_cmd->add_option("--seed", gen_seed, "random seed");
    gen_cmd->add_option("--out", gen_out, "output gpack stem")->required();

    // privacy
    auto* priv_cmd = app.add_subcommand("privacy", "privacy metric battery");
    std::string p_train, p_holdout, p_synth, p_cond = "synthetic", p_out = "privacy";
    bool per_class = false;
    uint64_t p_seed = default_seed();
    priv_cmd->add_option("--train", p_train, "training gpack stem")->required();
    priv_cmd->add_option("--holdout", p_holdout, "holdout gpack stem")->required();
    priv_cmd->add_option("--synthetic", p_synth, "synthetic gpack stem")->required();
    priv_cmd->add_option("--condition", p_cond, "condition label for the report");
    priv_cmd->add_flag("--per-class", per_class, "add class-stratified rows");
    priv_cmd->add_option("--seed", p_seed, "random seed");
    priv_cmd->add_option("--out", p_out, "output prefix");

    // ld
    auto* ld_cmd = app.add_subcommand("ld", "pairwise r^2 grid and decay curve");
    std::string ld_geno, ld_out, ld_cond = "original";
    bool ld_decay_flag = false;
    ld_cmd->add_option("--genotypes", ld_geno, "gpack stem")->required();
    ld_cmd->add_flag("--decay", ld_decay_flag, "also write the distance-decay curve");
    ld_cmd->add_option("--condition", ld_cond, "condition label for the JSON output");
    ld_cmd->add_option("--out", ld_out, "output prefix")->required();

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "full pipeline from a config file");
    std::string eval_config, eval_out;
    int64_t eval_seed = -1;
    bool eval_det = false;
    eval_cmd->add_option("--config", eval_config, "evaluation config file")->required();
    eval_cmd->add_option("--out", eval_out, "override output directory");
    eval_cmd->add_option("--seed", eval_seed, "override config seed");
    eval_cmd->add_flag("--deterministic", eval_det, "exclude timestamps from the report");

    // report
    auto* rep_cmd = app.add_subcommand("report", "merge part JSONs into one report");
    std::string r_tstr, r_priv, r_ld, r_betas, r_out;
    rep_cmd->add_option("--tstr", r_tstr, "tstr section JSON");
    rep_cmd->add_option("--privacy", r_priv, "privacy section JSON");
    rep_cmd->add_option("--ld", r_ld, "ld section JSON");
    rep_cmd->add_option("--betas", r_betas, "betas section JSON");
    rep_cmd->add_option("--out", r_out, "merged report path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (sim_cmd->parsed())
            cmd_simulate(sim, prevalence, !no_standardize, sim_seed, sim_out);
        else if (sel_cmd->parsed())
            cmd_select(sel_geno, sel_gwas, window_kb, sel_r2, top_l, sel_out, sel_gwas_out);
        else if (vae_cmd->parsed())
            cmd_train_vae(vae_data, vae_preset, vae_epochs, vae_seed, vae_out);
        else if (ldm_cmd->parsed())
            cmd_train_ldm(ldm_latents, ldm_labels, ldm_preset, ldm_epochs, ldm_seed, ldm_out);
        else if (gen_cmd->parsed())
            cmd_generate(gen_vae, gen_ldm, gen_mode, guidance, steps, gen_cases, gen_controls,
                         gen_seed, gen_out);
        else if (priv_cmd->parsed())
            cmd_privacy(p_train, p_holdout, p_synth, p_cond, per_class, p_seed, p_out);
        else if (ld_cmd->parsed())
            cmd_ld(ld_geno, ld_decay_flag, ld_cond, ld_out);
        else if (eval_cmd->parsed())
            cmd_evaluate(eval_config, eval_out, eval_seed, eval_det);
        else if (rep_cmd->parsed())
            cmd_report(r_tstr, r_priv, r_ld, r_betas, r_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
