// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Training-based criteria run at desk scale on synthetic corpora;
// oracle criteria run exhaustively.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "vaelab/diagnostics.hpp"
#include "vaelab/runner.hpp"
#include "vaelab/ssl.hpp"

using namespace vaelab;
using corpus::Document;
using corpus::LabeledCorpus;
using corpus::Split;
using models::DecoderKind;
using models::EncoderKind;
using models::ModelConfig;
using models::SeqVae;
using num::Mat;
using num::Tape;
using num::Var;
using objectives::FreeBitsFlavor;
using objectives::PipelineResult;
using objectives::PretrainKind;
using objectives::RateConfig;
using objectives::TrainConfig;
using objectives::TrainMode;
using objectives::TrainResult;

namespace {

struct Outcome {
    int id;
    std::string name;
    bool pass;
    std::string detail;
    double seconds;
};
std::vector<Outcome> g_results;

class Timer {
  public:
    Timer() : t0_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

  private:
    std::chrono::steady_clock::time_point t0_;
};

void record(int id, const std::string& name, bool pass, const std::string& detail,
            double seconds) {
    g_results.push_back({id, name, pass, detail, seconds});
    std::printf("[%s] criterion %d (%s): %s  [%.1fs]\n", pass ? "PASS" : "FAIL", id,
                name.c_str(), detail.c_str(), seconds);
    std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// ---- shared corpora ----

// Rate-control / collapse corpus: longer documents (latent demand well above
// the target rates), marker near the end so posterior means stay label-
// informative after a collapse.
LabeledCorpus corpus_rate() {
    corpus::SynthSpec spec;
    spec.num_classes = 4;
    spec.vocab_size = 200;
    spec.doc_len_min = 12;
    spec.doc_len_max = 20;
    spec.marker_position = 11;
    spec.marker_strength = 1.0;
    spec.docs_train = 5000;
    spec.docs_valid = 1000;
    spec.docs_test = 1000;
    return corpus::synth_corpus(spec, 42);
}

// Memorization corpus: marker pinned at position 5; length span keeps
// short documents for profiles (marker outside the mid window at L=7) and
// long documents the recency-biased baseline struggles with.
LabeledCorpus corpus_marker5() {
    corpus::SynthSpec spec;
    spec.num_classes = 4;
    spec.vocab_size = 200;
    spec.doc_len_min = 6;
    spec.doc_len_max = 14;
    spec.marker_position = 5;
    spec.marker_strength = 1.0;
    spec.docs_train = 5000;
    spec.docs_valid = 1000;
    spec.docs_test = 1000;
    return corpus::synth_corpus(spec, 43);
}

LabeledCorpus corpus_marker1() {
    corpus::SynthSpec spec;
    spec.num_classes = 4;
    spec.vocab_size = 200;
    spec.doc_len_min = 6;
    spec.doc_len_max = 14;
    spec.marker_position = 1;
    spec.marker_strength = 1.0;
    spec.docs_train = 5000;
    spec.docs_valid = 1000;
    spec.docs_test = 1000;
    return corpus::synth_corpus(spec, 44);
}

ModelConfig nvdm_config(const LabeledCorpus& c, int d) {
    ModelConfig mc;
    mc.encoder = EncoderKind::BowMax;
    mc.decoder = DecoderKind::Unigram;
    mc.vocab_size = c.vocab.size();
    mc.embed_dim = 24;
    mc.hidden_dim = 96;
    mc.uni_hidden = 96;
    mc.latent_dim = d;
    mc.dropout_p = 0.0;
    mc.vocab_hash = c.vocab.hash();
    return mc;
}

ModelConfig lstm_config(const LabeledCorpus& c, EncoderKind enc, int d) {
    ModelConfig mc;
    mc.encoder = enc;
    mc.decoder = DecoderKind::LstmConditional;
    mc.vocab_size = c.vocab.size();
    mc.embed_dim = 20;
    mc.hidden_dim = 40;
    mc.latent_dim = d;
    mc.dropout_p = 0.1;
    mc.vocab_hash = c.vocab.hash();
    return mc;
}

TrainConfig desk_train(std::uint64_t seed, int max_epochs, int patience, int max_halvings) {
    TrainConfig t;
    t.batch_size = 64;
    t.max_epochs = max_epochs;
    t.patience = patience;
    t.max_halvings = max_halvings;
    t.seed_init = seed;
    t.seed_data = seed;
    t.seed_sample = seed;
    return t;
}

std::vector<std::vector<int>> reconstruct_all(const SeqVae& m,
                                              const std::vector<const Document*>& docs,
                                              int max_len, std::uint64_t z_seed) {
    std::vector<std::vector<int>> out(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i)
        out[i] = decode::reconstruct(m, *docs[i], decode::Strategy::Greedy, 1, max_len,
                                     Rng::mix(z_seed, i))
                     .tokens;
    return out;
}

// ---- criterion 1: gradient correctness ----

void criterion1() {
    Timer timer;
    Document d1, d2, d3;
    d1.token_ids = {4, 5, 6};
    d2.token_ids = {6, 4, 5};
    d3.token_ids = {5, 6, 4};
    std::vector<const Document*> batch = {&d1, &d2, &d3};
    RateConfig rc{0.0, FreeBitsFlavor::None, 0};

    double worst = 0.0;
    std::string worst_pair;
    const EncoderKind encs[] = {EncoderKind::LstmLast, EncoderKind::LstmMax,
                                EncoderKind::LstmAvg, EncoderKind::BowMax};
    const DecoderKind decs[] = {DecoderKind::LstmConditional, DecoderKind::Unigram};
    for (EncoderKind e : encs) {
        for (DecoderKind dk : decs) {
            ModelConfig mc;
            mc.encoder = e;
            mc.decoder = dk;
            mc.vocab_size = 7;
            mc.embed_dim = 3;
            mc.hidden_dim = 4;
            mc.latent_dim = 2;
            mc.uni_hidden = 4;
            SeqVae m(mc, 31);
            Rng wr(13);
            for (models::Param* p : m.params().all()) {
                if (p->name.find(".b") != std::string::npos)
                    for (double& v : p->w.a) v = wr.uniform_range(-1.6, 1.6);
                else
                    for (double& v : p->w.a) v = wr.uniform_range(-0.8, 0.8);
            }
            auto eval = [&](bool with_grad) {
                Tape t;
                Rng rng(17);
                objectives::BatchLoss bl = objectives::elbo_loss(
                    t, m, batch, rc, 0, TrainMode::Vae, false, rng, nullptr);
                if (with_grad) {
                    m.params().zero_grads();
                    t.backward(bl.objective);
                }
                return bl.report.objective;
            };
            std::vector<num::GradCheckParam> params;
            for (models::Param* p : m.params().all())
                params.push_back({p->name, &p->w, &p->g});
            const double err = num::grad_check(eval, params, 1e-5);
            if (err > worst) {
                worst = err;
                worst_pair = std::string(models::encoder_name(e)) + "/" +
                             models::decoder_name(dk);
            }
        }
    }
    const double secs = timer.seconds();
    record(1, "gradient correctness", worst < 1e-4 && secs < 60.0,
           fmt("worst max-rel-err %.2e (%s), limit 1e-4; %.1fs < 60s", worst,
               worst_pair.c_str(), secs),
           secs);
}

// ---- criterion 2: rate control ----

void criterion2(const LabeledCorpus& cr) {
    Timer timer;
    bool pass = true;
    std::string detail;

    struct RunSpec {
        double lambda;
        FreeBitsFlavor flavor;
        int max_epochs, patience, halvings;
    };
    const RunSpec runs[] = {
        {8.0, FreeBitsFlavor::Delta, 140, 10, 2},
        {2.0, FreeBitsFlavor::Delta, 80, 6, 4},
        {8.0, FreeBitsFlavor::PerComponent, 80, 6, 4},
    };
    for (const auto& rs : runs) {
        Timer run_timer;
        SeqVae m(nvdm_config(cr, 16), 1);
        TrainConfig t = desk_train(1, rs.max_epochs, rs.patience, rs.halvings);
        RateConfig rc{rs.lambda, rs.flavor, 0};
        TrainResult r = objectives::sgd_train(m, cr, t, rc, TrainMode::Vae);
        const double kl = r.final_valid.rate;
        const double secs = run_timer.seconds();
        bool ok;
        if (rs.flavor == FreeBitsFlavor::Delta)
            ok = kl >= rs.lambda && kl <= rs.lambda + 0.5;
        else
            ok = kl >= rs.lambda;
        ok = ok && secs < 600.0;
        pass = pass && ok;
        detail += fmt("%s lam=%g: KL=%.3f in %.0fs%s; ",
                      objectives::flavor_name(rs.flavor), rs.lambda, kl, secs,
                      ok ? "" : " (FAIL)");
    }
    record(2, "rate control", pass, detail, timer.seconds());
}

// ---- criterion 3: posterior collapse ----

void criterion3(const LabeledCorpus& cr) {
    Timer timer;
    SeqVae m(lstm_config(cr, EncoderKind::LstmLast, 16), 1);
    TrainConfig t = desk_train(1, 25, 3, 4);
    RateConfig rc{0.0, FreeBitsFlavor::None, 0};
    TrainResult r = objectives::sgd_train(m, cr, t, rc, TrainMode::Vae);
    const double kl = r.final_valid.rate;

    ssl::SslConfig scfg;
    ssl::MuVsZReport probes = ssl::mu_vs_z_probe(m, cr, 500, scfg);
    std::vector<int> test_labels;
    for (const auto* d : cr.docs_of(Split::Test)) test_labels.push_back(d->label);
    const double chance = ssl::permutation_chance_f1(test_labels, cr.num_classes, 7);

    const bool ok_kl = kl < 0.05;
    const bool ok_z = std::abs(probes.f1_z - chance) <= 0.03;
    const bool ok_mu = probes.f1_mu >= chance + 0.10;
    record(3, "posterior collapse", ok_kl && ok_z && ok_mu,
           fmt("KL=%.4f (<0.05%s); z-F1=%.3f vs chance %.3f (|diff|<=0.03%s); mu-F1=%.3f "
               ">= chance+0.10%s",
               kl, ok_kl ? "" : " FAIL", probes.f1_z, chance, ok_z ? "" : " FAIL",
               probes.f1_mu, ok_mu ? "" : " FAIL"),
           timer.seconds());
}

// ---- criteria 4 & 5: memorization pathology and the variant fix ----

struct TrainedCell {
    std::unique_ptr<SeqVae> model;
    double final_rate = 0.0;
};

TrainedCell train_baseline(const LabeledCorpus& cm, std::uint64_t seed) {
    // last-PreAE at lambda 8, the paper's canonical baseline
    ModelConfig mc = lstm_config(cm, EncoderKind::LstmLast, 16);
    TrainConfig t = desk_train(seed, 60, 6, 3);
    RateConfig rc{8.0, FreeBitsFlavor::Delta, 0};
    PipelineResult pr = objectives::pretrain_pipeline(PretrainKind::PreAE, mc, cm, t, rc);
    TrainedCell cell;
    cell.model = std::make_unique<SeqVae>(std::move(pr.model));
    cell.final_rate = pr.phase2.final_valid.rate;
    return cell;
}

TrainedCell train_variant(const LabeledCorpus& cm, std::uint64_t seed) {
    // BowMax encoder, no pretraining, lambda 8
    ModelConfig mc = lstm_config(cm, EncoderKind::BowMax, 16);
    TrainConfig t = desk_train(seed, 60, 6, 3);
    RateConfig rc{8.0, FreeBitsFlavor::Delta, 0};
    SeqVae m(mc, seed);
    TrainResult r = objectives::sgd_train(m, cm, t, rc, TrainMode::Vae);
    TrainedCell cell;
    cell.model = std::make_unique<SeqVae>(std::move(m));
    cell.final_rate = r.final_valid.rate;
    return cell;
}

void criteria45(const LabeledCorpus& cm) {
    Timer timer;
    const int n_seeds = 3;

    // Baselines, variants, and one LM — trained with a two-wide pool.
    std::vector<TrainedCell> base(n_seeds), var(n_seeds);
    std::unique_ptr<SeqVae> lm;
    {
        std::vector<std::function<void()>> jobs;
        for (int s = 0; s < n_seeds; ++s) {
            jobs.push_back([&, s] { base[s] = train_baseline(cm, 1 + s); });
            jobs.push_back([&, s] { var[s] = train_variant(cm, 1 + s); });
        }
        jobs.push_back([&] {
            ModelConfig mc = lstm_config(cm, EncoderKind::LstmLast, 1);
            mc.decoder = DecoderKind::LstmUnconditional;
            auto m = std::make_unique<SeqVae>(mc, 1);
            TrainConfig t = desk_train(1, 30, 3, 4);
            RateConfig rc{0.0, FreeBitsFlavor::None, 0};
            objectives::sgd_train(*m, cm, t, rc, TrainMode::Lm);
            lm = std::move(m);
        });
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (std::size_t i = next++; i < jobs.size(); i = next++) jobs[i]();
        };
        std::thread t1(worker), t2(worker);
        t1.join();
        t2.join();
    }

    auto test_docs = cm.docs_of(Split::Test);
    std::vector<std::vector<int>> sources;
    for (const auto* d : test_docs) sources.push_back(d->token_ids);
    const int max_len = decode::default_max_len(cm);

    // criterion 4 on the seed-1 baseline
    {
        const SeqVae& model = *base[0].model;
        const int L = 7;  // marker (1-based position 6) sits outside 3..L-2
        diagnostics::LossProfile pv =
            diagnostics::position_loss_profile(model, cm, Split::Test, L, 5);
        diagnostics::LossProfile pl =
            diagnostics::position_loss_profile(*lm, cm, Split::Test, L, 5);
        std::vector<double> ri = diagnostics::relative_improvement(pv, pl);
        double mid = 0.0;
        for (int p = 3; p <= L - 2; ++p) mid += ri[p - 1];
        mid /= (L - 4);
        const bool ok_a = ri[0] >= 2.0 * mid;

        auto recons = reconstruct_all(model, test_docs, max_len, 7);
        diagnostics::MemorizationReport memo =
            diagnostics::memorization_metrics(sources, recons);
        diagnostics::MemorizationReport oracle = diagnostics::label_oracle_baseline(cm);
        const bool ok_b = memo.first_word_acc >= 2.0 * oracle.first_word_acc;
        record(4, "memorization pathology", ok_a && ok_b,
               fmt("r1=%.3f vs 2x mid-mean %.3f%s; first-word %.4f vs 2x oracle %.4f%s "
                   "(baseline KL %.2f)",
                   ri[0], 2.0 * mid, ok_a ? "" : " FAIL", memo.first_word_acc,
                   2.0 * oracle.first_word_acc, ok_b ? "" : " FAIL", base[0].final_rate),
               timer.seconds());
    }

    // criterion 5, averaged over the three seeds
    {
        Timer t5;
        double base_first = 0.0, var_first = 0.0;
        for (int s = 0; s < n_seeds; ++s) {
            auto rb = reconstruct_all(*base[s].model, test_docs, max_len, 7);
            auto rv = reconstruct_all(*var[s].model, test_docs, max_len, 7);
            base_first +=
                diagnostics::memorization_metrics(sources, rb).first_word_acc / n_seeds;
            var_first +=
                diagnostics::memorization_metrics(sources, rv).first_word_acc / n_seeds;
        }
        const bool ok_a = var_first <= 0.7 * base_first;

        ssl::SslConfig scfg;
        scfg.g = 3;
        auto run_ssl = [&](std::vector<TrainedCell>& cells) {
            ssl::EncoderGrid grid;
            grid.points = {{8.0, 16}};
            grid.num_seeds = n_seeds;
            grid.model = [&cells](int, int j) -> const SeqVae& { return *cells[j].model; };
            ssl::SslResult res = ssl::ssl_protocol(grid, cm, 50, scfg);
            return res.variance.mean;
        };
        const double f_base = run_ssl(base);
        const double f_var = run_ssl(var);
        const bool ok_b = f_var >= f_base - 0.01 && f_var >= f_base + 0.03;
        record(5, "variant fix", ok_a && ok_b,
               fmt("first-word: variant %.4f <= 0.7x baseline %.4f%s; SSL@50: variant %.3f vs "
                   "baseline %.3f (needs >= +0.03)%s",
                   var_first, 0.7 * base_first, ok_a ? "" : " FAIL", f_var, f_base,
                   ok_b ? "" : " FAIL"),
               t5.seconds());
    }
}

// ---- criterion 6: oracle equivalences ----

// (lives in its own file-scope section below to keep toy models local)
#include "acceptance_oracles.inc"

// ---- criterion 7: IWAE bound tightness ----

void criterion7() {
    Timer timer;
    // tiny corpus over a 3-word vocabulary (ids 4..6), d = 1
    corpus::SynthSpec spec;
    spec.num_classes = 2;
    spec.vocab_size = 7;
    spec.doc_len_min = 2;
    spec.doc_len_max = 4;
    spec.marker_position = 0;
    spec.marker_strength = 0.0;
    spec.docs_train = 200;
    spec.docs_valid = 50;
    spec.docs_test = 50;
    LabeledCorpus tc = corpus::synth_corpus(spec, 7);

    ModelConfig mc;
    mc.encoder = EncoderKind::LstmLast;
    mc.decoder = DecoderKind::LstmConditional;
    mc.vocab_size = 7;
    mc.embed_dim = 4;
    mc.hidden_dim = 6;
    mc.latent_dim = 1;
    mc.dropout_p = 0.0;
    mc.vocab_hash = tc.vocab.hash();
    SeqVae m(mc, 3);
    TrainConfig t = desk_train(3, 12, 3, 2);
    t.batch_size = 16;
    RateConfig rc{0.5, FreeBitsFlavor::Delta, 0};
    objectives::sgd_train(m, tc, t, rc, TrainMode::Vae);

    // quadrature-exact NLL for one document
    const Document* doc = tc.docs_of(Split::Test)[0];
    const double exact = [&] {
        const int grid_n = 4001;
        const double lo = -9.0, hi = 9.0;
        const double h = (hi - lo) / (grid_n - 1);
        Mat z(grid_n, 1);
        for (int i = 0; i < grid_n; ++i) z(i, 0) = lo + h * i;
        std::vector<const Document*> reps(grid_n, doc);
        Tape tape;
        tape.set_grad_enabled(false);
        models::DecodeLoss dl = m.decoder_nll(tape, tape.constant(z), reps, false, nullptr);
        const Mat& nll = tape.val(dl.per_doc_nll);
        // trapezoid over p(x|z) phi(z) in scaled space
        std::vector<double> logf(grid_n);
        double mx = -1e300;
        for (int i = 0; i < grid_n; ++i) {
            const double zz = z(i, 0);
            logf[i] = -nll(i, 0) - 0.5 * (std::log(2 * M_PI) + zz * zz);
            mx = std::max(mx, logf[i]);
        }
        double s = 0.0;
        for (int i = 0; i < grid_n; ++i)
            s += std::exp(logf[i] - mx) * (i == 0 || i == grid_n - 1 ? 0.5 : 1.0);
        return -(mx + std::log(s * h));
    }();
    const double est = diagnostics::iwae_nll(m, *doc, 10000, 11);
    const double gap = est - exact;
    const bool ok_gap = gap < 0.01 && gap > -0.01;  // the bound may only exceed by < 0.01

    // corpus estimates non-increasing in K over paired seeds
    auto docs = tc.docs_of(Split::Test);
    const int n_seeds = 10;
    std::vector<double> est1(n_seeds), est5(n_seeds), est50(n_seeds);
    for (int s = 0; s < n_seeds; ++s) {
        auto total = [&](int K) {
            double nats = 0.0;
            std::uint64_t idx = 0;
            for (const auto* d : docs)
                nats += diagnostics::iwae_nll(m, *d, K,
                                              Rng::mix(1000 + s, (idx++) * 131 + K));
            return nats / docs.size();
        };
        est1[s] = total(1);
        est5[s] = total(5);
        est50[s] = total(50);
    }
    auto paired_ok = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double mean = 0.0, var = 0.0;
        for (int s = 0; s < n_seeds; ++s) mean += (a[s] - b[s]) / n_seeds;
        for (int s = 0; s < n_seeds; ++s)
            var += (a[s] - b[s] - mean) * (a[s] - b[s] - mean) / (n_seeds - 1);
        const double se = std::sqrt(var / n_seeds);
        return mean >= -3.0 * se;  // a (smaller K) must not be below b beyond noise
    };
    const bool ok_mono = paired_ok(est1, est5) && paired_ok(est5, est50);
    record(7, "iwae bound tightness", ok_gap && ok_mono,
           fmt("iwae(1e4)-exact = %.5f nats (<0.01%s); means K=1/5/50: %.4f/%.4f/%.4f "
               "non-increasing%s",
               gap, ok_gap ? "" : " FAIL", [&] {
                   double v = 0;
                   for (double x : est1) v += x / n_seeds;
                   return v;
               }(),
               [&] {
                   double v = 0;
                   for (double x : est5) v += x / n_seeds;
                   return v;
               }(),
               [&] {
                   double v = 0;
                   for (double x : est50) v += x / n_seeds;
                   return v;
               }(),
               ok_mono ? "" : " FAIL"),
           timer.seconds());
}

// ---- criterion 8: first-k-words analysis ----

void criterion8(const LabeledCorpus& cm1, const LabeledCorpus& cm5) {
    Timer timer;
    ssl::BowClassifier all1 = ssl::bow_reference_classifier(cm1, 0, 64, 1);
    ssl::BowClassifier first1 = ssl::bow_reference_classifier(cm1, 3, 64, 1);
    const double ratio1 = first1.test_f1 / all1.test_f1;
    ssl::BowClassifier all5 = ssl::bow_reference_classifier(cm5, 0, 64, 1);
    ssl::BowClassifier first5 = ssl::bow_reference_classifier(cm5, 3, 64, 1);
    const double ratio5 = first5.test_f1 / all5.test_f1;
    const bool ok = ratio1 >= 0.9 && ratio5 <= 0.3;
    record(8, "first-k-words analysis", ok,
           fmt("marker@1: first3/all = %.3f/%.3f = %.3f (>=0.9); marker@5: %.3f/%.3f = %.3f "
               "(<=0.3)",
               first1.test_f1, all1.test_f1, ratio1, first5.test_f1, all5.test_f1, ratio5),
           timer.seconds());
}

// ---- criterion 9: determinism ----

void criterion9() {
    Timer timer;
    const char* micro = R"(
corpus.source = synth
corpus.synth.num_classes = 2
corpus.synth.vocab_size = 20
corpus.synth.doc_len_min = 4
corpus.synth.doc_len_max = 6
corpus.synth.marker_position = 1
corpus.synth.marker_strength = 1.0
corpus.synth.docs_train = 60
corpus.synth.docs_valid = 20
corpus.synth.docs_test = 20
corpus.synth.seed = 3
model.encoder = lstm_last
model.decoder = lstm_cond
model.embed_dim = 6
model.hidden_dim = 8
model.lambda_list = 1
model.d_list = 4
train.batch_size = 16
train.max_epochs = 2
seeds.init = 1
decode.strategy = greedy
decode.beam_size = 1
diagnose.iwae_k = 3
ssl.regimes = 5
ssl.g = 2
out.dir = accept9
)";
    namespace fs = std::filesystem;
    cli::ExperimentConfig cfg = cli::config_from_text(micro);
    const std::string root1 = "/tmp/vaelab_accept9_a";
    const std::string root2 = "/tmp/vaelab_accept9_b";
    fs::remove_all(root1);
    fs::remove_all(root2);
    auto run_all = [&](const std::string& root) {
        setenv("VAELAB_OUT_ROOT", root.c_str(), 1);
        cli::RunOptions opts;
        for (const char* sub : {"synth", "train", "diagnose", "decode", "ssl", "agreement"})
            cli::run_subcommand(sub, cfg, opts);
        unsetenv("VAELAB_OUT_ROOT");
    };
    run_all(root1);
    run_all(root2);
    const std::string d1 = root1 + "/accept9/" + cfg.run_id();
    const std::string d2 = root2 + "/accept9/" + cfg.run_id();
    int compared = 0, mismatched = 0;
    for (const auto& entry : fs::directory_iterator(d1)) {
        const std::string name = entry.path().filename();
        std::ifstream a(entry.path(), std::ios::binary), b(d2 + "/" + name, std::ios::binary);
        std::stringstream sa, sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        ++compared;
        if (sa.str() != sb.str()) ++mismatched;
    }
    record(9, "determinism", compared >= 14 && mismatched == 0,
           fmt("%d artifacts byte-compared across fresh reruns, %d mismatched", compared,
               mismatched),
           timer.seconds());
}

}  // namespace

int main() {
    Timer total;
    std::printf("== acceptance suite ==\n");

    criterion1();
    LabeledCorpus cr = corpus_rate();
    criterion2(cr);
    criterion3(cr);
    LabeledCorpus cm5 = corpus_marker5();
    criteria45(cm5);
    criterion6();
    criterion7();
    LabeledCorpus cm1 = corpus_marker1();
    criterion8(cm1, cm5);
    criterion9();

    const double secs = total.seconds();
    const bool in_budget = secs < 45.0 * 60.0;
    record(10, "end-to-end budget", in_budget, fmt("%.1f min < 45 min", secs / 60.0), secs);

    bool all = true;
    for (const auto& r : g_results) all = all && r.pass;
    std::printf("== %s: %zu/%zu criteria passed in %.1f min ==\n", all ? "SUCCESS" : "FAILURE",
                static_cast<std::size_t>(std::count_if(g_results.begin(), g_results.end(),
                                                       [](const Outcome& o) { return o.pass; })),
                g_results.size(), secs / 60.0);
    return all ? 0 : 1;
}
