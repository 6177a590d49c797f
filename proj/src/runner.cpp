#include "vaelab/runner.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "vaelab/diagnostics.hpp"
#include "vaelab/ssl.hpp"

namespace vaelab::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using corpus::Document;
using corpus::LabeledCorpus;
using corpus::Split;
using models::SeqVae;

namespace {

struct GridCell {
    double lambda;
    int d;
    int seed_index;
};

std::string cell_tag(const GridCell& c) {
    return "l" + format_double(c.lambda) + "_d" + std::to_string(c.d) + "_s" +
           std::to_string(c.seed_index);
}

std::string model_id_of(const ExperimentConfig& cfg, const GridCell& c) {
    return std::string(models::encoder_name(cfg.encoder)) + "-" +
           models::decoder_name(cfg.decoder) + "-" + objectives::pretrain_name(cfg.pretrain) +
           "_" + cell_tag(c);
}

std::vector<GridCell> grid_cells(const ExperimentConfig& cfg) {
    std::vector<GridCell> cells;
    for (double l : cfg.lambda_list)
        for (int d : cfg.d_list)
            for (std::size_t j = 0; j < cfg.seeds_init.size(); ++j)
                cells.push_back({l, d, static_cast<int>(j)});
    return cells;
}

LabeledCorpus build_corpus(const ExperimentConfig& cfg) {
    if (cfg.corpus_source == "synth") return corpus::synth_corpus(cfg.synth, cfg.synth_seed);
    return corpus::load_corpus_splits(cfg.tsv_train, cfg.tsv_valid, cfg.tsv_test, cfg.load);
}

int modal_test_length(const LabeledCorpus& c) {
    std::map<int, int> counts;
    for (const auto* d : c.docs_of(Split::Test)) ++counts[d->raw_len()];
    int best_len = 0, best_n = -1;
    for (const auto& [len, n] : counts)
        if (n > best_n) {
            best_n = n;
            best_len = len;
        }
    return best_len;
}

// Parallel map over an index range; results are written by index so output
// order is independent of scheduling.
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int nw = std::min(workers, n);
    for (int w = 0; w < nw; ++w)
        pool.emplace_back([&]() {
            for (int i = next++; i < n; i = next++) fn(i);
        });
    for (auto& t : pool) t.join();
}

std::string join_tokens(const LabeledCorpus& c, const std::vector<int>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += c.vocab.token(ids[i]);
    }
    return out;
}

class Csv {
  public:
    Csv(const std::string& path, const std::string& schema, const std::string& header)
        : f_(path) {
        if (!f_) throw IoError("cannot write " + path);
        f_ << "# schema: " << schema << "\n" << header << "\n";
    }
    template <typename... Args>
    void row(Args&&... args) {
        bool first = true;
        ((f_ << (first ? "" : ","), first = false, put(args)), ...);
        f_ << "\n";
    }

  private:
    void put(double v) { f_ << format_double(v); }
    void put(int v) { f_ << v; }
    void put(std::int64_t v) { f_ << v; }
    void put(std::uint64_t v) { f_ << v; }
    void put(const std::string& s) { f_ << s; }
    void put(const char* s) { f_ << s; }
    std::ofstream f_;
};

void write_history_csv(const std::string& path,
                       const std::vector<objectives::EpochStats>& history) {
    Csv csv(path, "history v1", "epoch,rate,distortion,objective,lr,split");
    for (const auto& e : history) csv.row(e.epoch, e.rate, e.distortion, e.objective, e.lr, e.split);
}

std::string ckpt_name(const GridCell& c) { return "model_" + cell_tag(c) + ".ckpt"; }
std::string lm_ckpt_name(int seed_index) {
    return "lm_s" + std::to_string(seed_index) + ".ckpt";
}

// All grid checkpoints plus LM baselines, loaded from the run directory.
struct TrainedModels {
    std::vector<GridCell> cells;
    std::vector<std::unique_ptr<SeqVae>> cell_models;
    std::vector<std::unique_ptr<SeqVae>> lm_models;  // per seed index, may be empty
};

TrainedModels load_trained(const ExperimentConfig& cfg, const RunPaths& paths,
                           const LabeledCorpus& corpus) {
    TrainedModels tm;
    tm.cells = grid_cells(cfg);
    for (const auto& cell : tm.cells) {
        const std::string path = paths.file(ckpt_name(cell));
        if (!fs::exists(path))
            throw IoError("missing checkpoint " + path + " (run the train subcommand first)");
        auto model = std::make_unique<SeqVae>(models::load_checkpoint(path));
        if (model->config().vocab_hash != corpus.vocab.hash())
            throw ConfigError("checkpoint " + path + " was trained on a different vocabulary");
        tm.cell_models.push_back(std::move(model));
    }
    if (cfg.train_lm_baseline) {
        for (std::size_t j = 0; j < cfg.seeds_init.size(); ++j) {
            const std::string path = paths.file(lm_ckpt_name(static_cast<int>(j)));
            if (!fs::exists(path))
                throw IoError("missing LM baseline checkpoint " + path);
            tm.lm_models.push_back(
                std::make_unique<SeqVae>(models::load_checkpoint(path)));
        }
    }
    return tm;
}

// ---- subcommands ----

int cmd_synth(const ExperimentConfig& cfg, const RunPaths& paths) {
    LabeledCorpus c = build_corpus(cfg);
    corpus::write_tsv(c, Split::Train, paths.file("corpus_train.tsv"));
    corpus::write_tsv(c, Split::Valid, paths.file("corpus_valid.tsv"));
    corpus::write_tsv(c, Split::Test, paths.file("corpus_test.tsv"));
    std::printf("synth: %d train / %d valid / %d test docs, vocab %d -> %s\n",
                c.count_of(Split::Train), c.count_of(Split::Valid), c.count_of(Split::Test),
                c.vocab.size(), paths.run_dir.c_str());
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, const RunPaths& paths, const RunOptions& opts) {
    LabeledCorpus corpus = build_corpus(cfg);
    const std::uint64_t vhash = corpus.vocab.hash();
    auto cells = grid_cells(cfg);
    std::mutex io_mutex;

    parallel_for(static_cast<int>(cells.size()), opts.workers, [&](int i) {
        const GridCell& cell = cells[i];
        const std::string ckpt = paths.file(ckpt_name(cell));
        if (opts.resume && fs::exists(ckpt)) {
            std::lock_guard<std::mutex> lk(io_mutex);
            std::printf("train: %s exists, skipping\n", ckpt_name(cell).c_str());
            return;
        }
        objectives::TrainConfig tcfg = cfg.train_config(cell.seed_index);
        objectives::RateConfig rcfg{cell.lambda, cfg.flavor, cfg.anneal_epochs};
        models::ModelConfig mcfg = cfg.model_config(cell.d, corpus.vocab.size(), vhash);
        objectives::PipelineResult pr =
            objectives::pretrain_pipeline(cfg.pretrain, mcfg, corpus, tcfg, rcfg);

        models::CheckpointMeta meta;
        meta.lambda = cell.lambda;
        meta.flavor = objectives::flavor_name(cfg.flavor);
        meta.anneal_epochs = cfg.anneal_epochs;
        meta.seed_init = tcfg.seed_init;
        meta.seed_data = tcfg.seed_data;
        meta.seed_sample = tcfg.seed_sample;
        meta.epoch = pr.phase2.best_epoch;
        meta.phase = objectives::pretrain_name(cfg.pretrain);
        models::save_checkpoint(ckpt, pr.model, meta);
        write_history_csv(paths.file("history_" + cell_tag(cell) + ".csv"), pr.history);
        {
            std::lock_guard<std::mutex> lk(io_mutex);
            std::printf("train: %s done (best valid %.4f, rate %.4f)\n",
                        cell_tag(cell).c_str(), pr.phase2.best_valid_objective,
                        pr.phase2.final_valid.rate);
        }
    });

    if (cfg.train_lm_baseline) {
        parallel_for(static_cast<int>(cfg.seeds_init.size()), opts.workers, [&](int j) {
            const std::string ckpt = paths.file(lm_ckpt_name(j));
            if (opts.resume && fs::exists(ckpt)) return;
            objectives::TrainConfig tcfg = cfg.train_config(j);
            objectives::RateConfig rcfg{0.0, objectives::FreeBitsFlavor::None, 0};
            models::ModelConfig mcfg = cfg.model_config(1, corpus.vocab.size(), vhash);
            mcfg.decoder = models::DecoderKind::LstmUnconditional;
            SeqVae lm(mcfg, tcfg.seed_init);
            objectives::TrainResult r =
                objectives::sgd_train(lm, corpus, tcfg, rcfg, objectives::TrainMode::Lm);
            models::CheckpointMeta meta;
            meta.seed_init = tcfg.seed_init;
            meta.seed_data = tcfg.seed_data;
            meta.seed_sample = tcfg.seed_sample;
            meta.epoch = r.best_epoch;
            meta.phase = "lm_baseline";
            models::save_checkpoint(ckpt, lm, meta);
            write_history_csv(paths.file("history_lm_s" + std::to_string(j) + ".csv"),
                              r.history);
            std::lock_guard<std::mutex> lk(io_mutex);
            std::printf("train: lm_s%d done (valid nll %.4f)\n", j,
                        r.final_valid.distortion);
        });
    }
    return 0;
}

std::vector<std::vector<int>> reconstruct_test_split(const ExperimentConfig& cfg,
                                                     const LabeledCorpus& corpus,
                                                     const SeqVae& model, int max_len) {
    auto docs = corpus.docs_of(Split::Test);
    std::vector<std::vector<int>> out(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        decode::BeamHypothesis h =
            decode::reconstruct(model, *docs[i], cfg.strategy, cfg.beam_size, max_len,
                                Rng::mix(cfg.z_seed, i));
        out[i] = std::move(h.tokens);
    }
    return out;
}

int cmd_diagnose(const ExperimentConfig& cfg, const RunPaths& paths, const RunOptions& opts) {
    LabeledCorpus corpus = build_corpus(cfg);
    TrainedModels tm = load_trained(cfg, paths, corpus);
    const int L = cfg.profile_len > 0 ? cfg.profile_len : modal_test_length(corpus);
    const int max_len = static_cast<int>(std::ceil(
        cfg.max_len_factor * decode::default_max_len(corpus) / 1.5));

    // Per-position profiles plus the relative improvement against the
    // seed-matched LM baseline.
    Csv prof_csv(paths.file("profiles.csv"), "profile v1",
                 "position,mean_loss,model_id,lambda,d,seed,doc_len,n_docs");
    Csv ri_csv(paths.file("relative_improvement.csv"), "relative_improvement v1",
               "position,rel_improvement,model_id,lambda,d,seed,doc_len");
    std::vector<diagnostics::LossProfile> lm_profiles(tm.lm_models.size());
    for (std::size_t j = 0; j < tm.lm_models.size(); ++j) {
        lm_profiles[j] =
            diagnostics::position_loss_profile(*tm.lm_models[j], corpus, Split::Test, L,
                                               cfg.z_seed);
        for (std::size_t p = 0; p < lm_profiles[j].per_position.size(); ++p)
            prof_csv.row(static_cast<int>(p + 1), lm_profiles[j].per_position[p],
                         "lstm_lm_s" + std::to_string(j), 0.0, 0, static_cast<int>(j), L,
                         lm_profiles[j].n_docs);
    }
    for (std::size_t i = 0; i < tm.cells.size(); ++i) {
        const GridCell& cell = tm.cells[i];
        diagnostics::LossProfile prof = diagnostics::position_loss_profile(
            *tm.cell_models[i], corpus, Split::Test, L, cfg.z_seed);
        const std::string id = model_id_of(cfg, cell);
        for (std::size_t p = 0; p < prof.per_position.size(); ++p)
            prof_csv.row(static_cast<int>(p + 1), prof.per_position[p], id, cell.lambda, cell.d,
                         cell.seed_index, L, prof.n_docs);
        if (cell.seed_index < static_cast<int>(lm_profiles.size()) &&
            prof.per_position.size() == lm_profiles[cell.seed_index].per_position.size()) {
            auto ri = diagnostics::relative_improvement(prof, lm_profiles[cell.seed_index]);
            for (std::size_t p = 0; p < ri.size(); ++p)
                ri_csv.row(static_cast<int>(p + 1), ri[p], id, cell.lambda, cell.d,
                           cell.seed_index, L);
        }
    }

    // Memorization of first word / length / mid word, with the label oracle.
    Csv memo_csv(paths.file("memorization.csv"), "memorization v1",
                 "model_id,first_word_acc,mid_word_acc,length_match,n_pairs");
    {
        auto test_docs = corpus.docs_of(Split::Test);
        std::vector<std::vector<int>> sources;
        for (const auto* d : test_docs) sources.push_back(d->token_ids);
        for (std::size_t i = 0; i < tm.cells.size(); ++i) {
            auto recons = reconstruct_test_split(cfg, corpus, *tm.cell_models[i], max_len);
            diagnostics::MemorizationReport rep =
                diagnostics::memorization_metrics(sources, recons);
            memo_csv.row(model_id_of(cfg, tm.cells[i]), rep.first_word_acc, rep.mid_word_acc,
                         rep.length_match, rep.n_pairs);
        }
        diagnostics::MemorizationReport oracle = diagnostics::label_oracle_baseline(corpus);
        memo_csv.row("label_oracle", oracle.first_word_acc, oracle.mid_word_acc,
                     oracle.length_match, oracle.n_pairs);
    }

    // Pooled-component argmax statistics where applicable.
    if (cfg.encoder == models::EncoderKind::LstmMax ||
        cfg.encoder == models::EncoderKind::BowMax) {
        Csv am_csv(paths.file("argmax_stats.csv"), "argmax_stats v1",
                   "model_id,component,modal_position,fraction,threshold,consistent_count");
        for (std::size_t i = 0; i < tm.cells.size(); ++i) {
            diagnostics::ArgmaxPositionStats st =
                diagnostics::argmax_position_stats(*tm.cell_models[i], corpus, Split::Test, 0.8);
            const std::string id = model_id_of(cfg, tm.cells[i]);
            for (std::size_t jc = 0; jc < st.fraction.size(); ++jc)
                am_csv.row(id, static_cast<int>(jc), st.modal_position[jc], st.fraction[jc],
                           st.threshold, st.consistent_count);
        }
    }

    // Importance-weighted perplexity.
    {
        Csv iw_csv(paths.file("iwae.csv"), "iwae v1",
                   "model_id,lambda,d,seed,K,total_nats,total_tokens,ppl");
        for (std::size_t i = 0; i < tm.cells.size(); ++i) {
            diagnostics::PerplexityReport rep = diagnostics::corpus_ppl(
                *tm.cell_models[i], corpus, Split::Test, cfg.iwae_k, cfg.z_seed);
            iw_csv.row(model_id_of(cfg, tm.cells[i]), tm.cells[i].lambda, tm.cells[i].d,
                       tm.cells[i].seed_index, cfg.iwae_k, rep.total_nats, rep.total_tokens,
                       rep.ppl);
        }
    }
    std::printf("diagnose: wrote profiles, relative improvement, memorization, argmax stats, "
                "iwae under %s\n",
                paths.run_dir.c_str());
    return 0;
}

int cmd_decode(const ExperimentConfig& cfg, const RunPaths& paths) {
    LabeledCorpus corpus = build_corpus(cfg);
    TrainedModels tm = load_trained(cfg, paths, corpus);
    const int max_len = static_cast<int>(std::ceil(
        cfg.max_len_factor * decode::default_max_len(corpus) / 1.5));
    std::ofstream f(paths.file("reconstructions.tsv"));
    if (!f) throw IoError("cannot write reconstructions.tsv");
    f << "# schema: reconstructions v1\n";
    f << "model_id\tdoc_id\tsource\treconstruction\tstrategy\tz_seed\n";
    auto docs = corpus.docs_of(Split::Test);
    for (std::size_t i = 0; i < tm.cells.size(); ++i) {
        const std::string id = model_id_of(cfg, tm.cells[i]);
        auto recons = reconstruct_test_split(cfg, corpus, *tm.cell_models[i], max_len);
        for (std::size_t k = 0; k < docs.size(); ++k)
            f << id << '\t' << k << '\t' << join_tokens(corpus, docs[k]->token_ids) << '\t'
              << join_tokens(corpus, recons[k]) << '\t' << decode::strategy_name(cfg.strategy)
              << '\t' << Rng::mix(cfg.z_seed, k) << '\n';
    }
    std::printf("decode: wrote reconstructions.tsv for %zu models\n", tm.cells.size());
    return 0;
}

int cmd_ssl(const ExperimentConfig& cfg, const RunPaths& paths) {
    LabeledCorpus corpus = build_corpus(cfg);
    TrainedModels tm = load_trained(cfg, paths, corpus);

    // Index grid points (lambda, d) -> model per seed.
    ssl::EncoderGrid grid;
    for (double l : cfg.lambda_list)
        for (int d : cfg.d_list) grid.points.push_back({l, d});
    grid.num_seeds = static_cast<int>(cfg.seeds_init.size());
    auto model_at = [&](int p, int j) -> const SeqVae& {
        const double l = grid.points[p].lambda;
        const int d = grid.points[p].latent_dim;
        for (std::size_t i = 0; i < tm.cells.size(); ++i)
            if (tm.cells[i].lambda == l && tm.cells[i].d == d && tm.cells[i].seed_index == j)
                return *tm.cell_models[i];
        throw ContractError("ssl: missing grid cell");
    };
    grid.model = model_at;

    ssl::SslConfig scfg;
    scfg.g = cfg.ssl_g;
    scfg.z_seed = cfg.z_seed;

    json out;
    out["regimes"] = json::array();
    std::vector<int> regimes = cfg.ssl_regimes;
    if (cfg.ssl_full) regimes.push_back(0);
    for (int n_per_class : regimes) {
        ssl::SslResult res = ssl::ssl_protocol(grid, corpus, n_per_class, scfg);
        json jr;
        jr["n_per_class"] = n_per_class;
        jr["regime"] = n_per_class == 0 ? "full" : std::to_string(n_per_class);
        jr["F"] = json::array();
        for (int i = 0; i < res.F.rows; ++i) {
            json row = json::array();
            for (int j = 0; j < res.F.cols; ++j) row.push_back(res.F(i, j));
            jr["F"].push_back(row);
        }
        jr["mean_f1"] = res.variance.mean;
        jr["sigma_init"] = res.variance.sigma_init;
        jr["sigma"] = res.variance.sigma_resid;
        jr["selected_model"] = res.selected_model;
        jr["selected_C"] = res.selected_C;
        out["regimes"].push_back(jr);
        std::printf("ssl: regime %s mean F1 %.4f (sigma_init %.4f, sigma %.4f)\n",
                    jr["regime"].get<std::string>().c_str(), res.variance.mean,
                    res.variance.sigma_init, res.variance.sigma_resid);
    }
    std::ofstream f(paths.file("ssl.json"));
    f << out.dump(2) << "\n";
    return 0;
}

int cmd_agreement(const ExperimentConfig& cfg, const RunPaths& paths) {
    LabeledCorpus corpus = build_corpus(cfg);
    TrainedModels tm = load_trained(cfg, paths, corpus);
    const int max_len = static_cast<int>(std::ceil(
        cfg.max_len_factor * decode::default_max_len(corpus) / 1.5));
    ssl::BowClassifier clf = ssl::bow_reference_classifier(corpus, 0, 200, cfg.z_seed);

    auto test_docs = corpus.docs_of(Split::Test);
    std::vector<std::vector<int>> sources;
    for (const auto* d : test_docs) sources.push_back(d->token_ids);

    Csv csv(paths.file("agreement.csv"), "agreement v1",
            "model_id,agree,first_word_acc,mid_word_acc,length_match,approx_ppl,clf_test_f1");
    for (std::size_t i = 0; i < tm.cells.size(); ++i) {
        const SeqVae& model = *tm.cell_models[i];
        auto recons = reconstruct_test_split(cfg, corpus, model, max_len);
        std::vector<int> preds, golds;
        for (std::size_t k = 0; k < test_docs.size(); ++k) {
            preds.push_back(clf.predict(recons[k]));
            golds.push_back(test_docs[k]->label);
        }
        const double agree = ssl::macro_f1(preds, golds, corpus.num_classes);
        diagnostics::MemorizationReport memo =
            diagnostics::memorization_metrics(sources, recons);
        diagnostics::PerplexityReport ppl =
            diagnostics::corpus_ppl(model, corpus, Split::Test, cfg.iwae_k, cfg.z_seed);
        csv.row(model_id_of(cfg, tm.cells[i]), agree, memo.first_word_acc, memo.mid_word_acc,
                memo.length_match, ppl.ppl, clf.test_f1);
    }
    std::printf("agreement: wrote agreement.csv for %zu models\n", tm.cells.size());
    return 0;
}

// Aggregates existing artifacts; never recomputes.
int cmd_report(const ExperimentConfig& cfg, const RunPaths& paths) {
    json rep;
    rep["run_id"] = cfg.run_id();
    rep["artifacts"] = json::array();
    for (const auto& entry : fs::directory_iterator(paths.run_dir)) {
        if (entry.is_regular_file()) rep["artifacts"].push_back(entry.path().filename());
    }
    std::sort(rep["artifacts"].begin(), rep["artifacts"].end());

    // Final validation rows from each history CSV.
    json finals = json::array();
    for (const auto& cell : grid_cells(cfg)) {
        const std::string path = paths.file("history_" + cell_tag(cell) + ".csv");
        if (!fs::exists(path)) continue;
        std::ifstream f(path);
        std::string line, last_valid;
        while (std::getline(f, line))
            if (line.size() > 6 && line.substr(line.size() - 6) == ",valid") last_valid = line;
        if (last_valid.empty()) continue;
        json jc;
        jc["cell"] = cell_tag(cell);
        jc["last_valid_row"] = last_valid;
        finals.push_back(jc);
    }
    rep["training"] = finals;

    for (const char* name : {"ssl.json"}) {
        if (fs::exists(paths.file(name))) {
            std::ifstream f(paths.file(name));
            rep["ssl"] = json::parse(f);
        }
    }
    for (const char* name :
         {"memorization.csv", "agreement.csv", "iwae.csv", "profiles.csv"}) {
        if (!fs::exists(paths.file(name))) continue;
        std::ifstream f(paths.file(name));
        std::string content((std::istreambuf_iterator<char>(f)),
                            std::istreambuf_iterator<char>());
        rep[std::string("csv:") + name] = content;
    }

    std::ofstream f(paths.file("summary.json"));
    f << rep.dump(2) << "\n";
    std::printf("report: wrote summary.json (%zu artifacts)\n", rep["artifacts"].size());
    return 0;
}

}  // namespace

RunPaths prepare_run_dir(const ExperimentConfig& cfg) {
    std::string root = cfg.out_dir;
    if (const char* env = std::getenv("VAELAB_OUT_ROOT"); env && *env)
        root = std::string(env) + "/" + cfg.out_dir;
    RunPaths paths;
    paths.run_dir = root + "/" + cfg.run_id();
    fs::create_directories(paths.run_dir);
    std::ofstream f(paths.file("config.resolved"));
    if (!f) throw IoError("cannot write config.resolved under " + paths.run_dir);
    f << cfg.resolved_text();
    return paths;
}

int run_subcommand(const std::string& sub, const ExperimentConfig& cfg, const RunOptions& opts) {
    RunPaths paths = prepare_run_dir(cfg);
    if (sub == "synth") return cmd_synth(cfg, paths);
    if (sub == "train") return cmd_train(cfg, paths, opts);
    if (sub == "diagnose") return cmd_diagnose(cfg, paths, opts);
    if (sub == "decode") return cmd_decode(cfg, paths);
    if (sub == "ssl") return cmd_ssl(cfg, paths);
    if (sub == "agreement") return cmd_agreement(cfg, paths);
    if (sub == "report") return cmd_report(cfg, paths);
    throw ConfigError("unknown subcommand: " + sub);
}

}  // namespace vaelab::cli
