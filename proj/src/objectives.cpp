#include "vaelab/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace vaelab::objectives {

const char* flavor_name(FreeBitsFlavor f) {
    switch (f) {
        case FreeBitsFlavor::None: return "none";
        case FreeBitsFlavor::Delta: return "delta";
        case FreeBitsFlavor::PerComponent: return "per_component";
    }
    return "?";
}

FreeBitsFlavor parse_flavor(const std::string& s) {
    if (s == "none") return FreeBitsFlavor::None;
    if (s == "delta") return FreeBitsFlavor::Delta;
    if (s == "per_component") return FreeBitsFlavor::PerComponent;
    throw ConfigError("unknown free-bits flavor: " + s);
}

void TrainConfig::validate() const {
    // lr == 0 is degenerate but well-defined (no parameter movement).
    if (lr < 0.0) throw ConfigError("train: lr must be non-negative");
    if (clip_norm <= 0.0) throw ConfigError("train: clip_norm must be positive");
    if (batch_size < 1 || patience < 1 || max_halvings < 0 || max_epochs < 1)
        throw ConfigError("train: bad schedule parameters");
}

const char* pretrain_name(PretrainKind k) {
    switch (k) {
        case PretrainKind::None: return "none";
        case PretrainKind::PreAE: return "pre_ae";
        case PretrainKind::PreLM: return "pre_lm";
        case PretrainKind::PreUni: return "pre_uni";
    }
    return "?";
}

PretrainKind parse_pretrain(const std::string& s) {
    if (s == "none") return PretrainKind::None;
    if (s == "pre_ae") return PretrainKind::PreAE;
    if (s == "pre_lm") return PretrainKind::PreLM;
    if (s == "pre_uni") return PretrainKind::PreUni;
    throw ConfigError("unknown pretraining kind: " + s);
}

KlVars kl_diag_gauss(Tape& t, const models::LatentPosterior& post) {
    // 0.5 * (mu^2 + exp(logvar) - 1 - logvar), componentwise
    Var mu2 = t.mul(post.mu, post.mu);
    Var comp = t.scale(t.add(t.add(mu2, t.exp_(post.logvar)), t.affine(post.logvar, -1.0, -1.0)),
                       0.5);
    KlVars out;
    out.comp = comp;
    out.per_doc = t.sum_axis(comp, num::Axis::Cols);
    out.scalar_mean = t.mean_all(out.per_doc);
    out.comp_mean = t.mean_axis(comp, num::Axis::Rows);
    return out;
}

double kl_value(const Mat& mu, const Mat& logvar, std::vector<double>* components) {
    if (!mu.same_shape(logvar))
        throw ShapeError("kl_value: " + mu.shape_str() + " vs " + logvar.shape_str());
    double total = 0.0;
    if (components) components->assign(mu.size(), 0.0);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double k = 0.5 * (mu.a[i] * mu.a[i] + std::exp(logvar.a[i]) - 1.0 - logvar.a[i]);
        total += k;
        if (components) (*components)[i] = k;
    }
    return total;
}

// The clamp applies per document (then averages), matching the modified
// objective as written: a batch-mean clamp equilibrates strictly below the
// target rate because under-target batches escape the penalty entirely.
Var apply_free_bits(Tape& t, Var kl_per_doc, Var kl_comp_per_doc, const RateConfig& cfg,
                    int epoch) {
    Var modified;
    switch (cfg.flavor) {
        case FreeBitsFlavor::None: modified = t.mean_all(kl_per_doc); break;
        case FreeBitsFlavor::Delta:
            modified = t.mean_all(t.max_const(kl_per_doc, cfg.lambda));
            break;
        case FreeBitsFlavor::PerComponent: {
            const int k = t.val(kl_comp_per_doc).cols;
            modified = t.mean_all(
                t.sum_axis(t.max_const(kl_comp_per_doc, cfg.lambda / k), num::Axis::Cols));
            break;
        }
    }
    const double beta = cfg.beta(epoch);
    return beta == 1.0 ? modified : t.scale(modified, beta);
}

double apply_free_bits_value(double kl_scalar, const std::vector<double>& kl_components,
                             const RateConfig& cfg, int epoch) {
    double comp_sum = 0.0;
    for (double c : kl_components) comp_sum += c;
    if (!kl_components.empty() && std::abs(comp_sum - kl_scalar) > 1e-9)
        throw ContractError("apply_free_bits: components do not sum to the scalar KL");
    double modified = kl_scalar;
    switch (cfg.flavor) {
        case FreeBitsFlavor::None: break;
        case FreeBitsFlavor::Delta: modified = std::max(kl_scalar, cfg.lambda); break;
        case FreeBitsFlavor::PerComponent: {
            if (kl_components.empty())
                throw ContractError("apply_free_bits: per-component flavor needs components");
            const double floor = cfg.lambda / static_cast<double>(kl_components.size());
            modified = 0.0;
            for (double c : kl_components) modified += std::max(floor, c);
            break;
        }
    }
    return modified * cfg.beta(epoch);
}

BatchLoss elbo_loss(Tape& t, const SeqVae& model,
                    const std::vector<const corpus::Document*>& docs, const RateConfig& rcfg,
                    int epoch, TrainMode mode, bool train_mode, Rng& sample_rng,
                    Rng* dropout_rng) {
    BatchLoss out;
    out.report.beta = rcfg.beta(epoch);

    if (mode == TrainMode::Lm) {
        if (!model.config().is_lm()) throw ContractError("Lm mode requires an LSTM-LM model");
        models::DecodeLoss dl = model.decoder_nll(t, Var{}, docs, train_mode, dropout_rng);
        out.objective = t.mean_all(dl.per_doc_nll);
        out.report.distortion = t.val(out.objective).item();
        out.report.objective = out.report.distortion;
        return out;
    }

    if (model.config().is_lm()) throw ContractError("latent objective requires a latent head");
    models::LatentPosterior post = model.variational(t, model.encode_batch(t, docs));
    Var z = mode == TrainMode::AeMean ? post.mu : model.sample_latent(t, post, sample_rng);
    models::DecodeLoss dl = model.decoder_nll(t, z, docs, train_mode, dropout_rng);
    Var distortion = t.mean_all(dl.per_doc_nll);
    KlVars kl = kl_diag_gauss(t, post);
    out.report.rate = t.val(kl.scalar_mean).item();
    out.report.rate_components = t.val(kl.comp_mean).a;
    out.report.distortion = t.val(distortion).item();

    if (mode == TrainMode::Vae) {
        Var rate_term = apply_free_bits(t, kl.per_doc, kl.comp, rcfg, epoch);
        out.report.modified_rate = t.val(rate_term).item();
        out.objective = t.add(rate_term, distortion);
    } else {
        // AeMean / ReconSampled: reconstruction objective, rate is reported only.
        out.objective = distortion;
    }
    out.report.objective = t.val(out.objective).item();
    return out;
}

std::vector<std::vector<const corpus::Document*>> make_batches(
    const std::vector<const corpus::Document*>& docs, int batch_size, Rng& rng) {
    std::vector<const corpus::Document*> order = docs;
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(),
                     [](const corpus::Document* a, const corpus::Document* b) {
                         return a->raw_len() < b->raw_len();
                     });
    std::vector<std::vector<const corpus::Document*>> batches;
    std::size_t i = 0;
    while (i < order.size()) {
        std::vector<const corpus::Document*> batch;
        const int len = order[i]->raw_len();
        while (i < order.size() && order[i]->raw_len() == len &&
               static_cast<int>(batch.size()) < batch_size)
            batch.push_back(order[i++]);
        batches.push_back(std::move(batch));
    }
    return batches;
}

LossReport evaluate_split(const SeqVae& model, const corpus::LabeledCorpus& corpus,
                          corpus::Split split, const RateConfig& rcfg, int epoch, TrainMode mode,
                          std::uint64_t sample_seed, int batch_size) {
    auto docs = corpus.docs_of(split);
    if (docs.empty())
        throw InsufficientData(std::string("evaluate_split: empty split ") +
                               corpus::split_name(split));
    Rng order_rng(0);  // deterministic bucketing; no shuffle effect on means
    auto batches = make_batches(docs, batch_size, order_rng);
    Rng sample_rng(Rng::mix(sample_seed, 0x5EEDULL));
    double rate = 0.0, modified = 0.0, distortion = 0.0;
    std::vector<double> comp_mean;
    std::size_t n = 0;
    for (const auto& batch : batches) {
        Tape t;
        t.set_grad_enabled(false);
        BatchLoss bl =
            elbo_loss(t, model, batch, rcfg, epoch, mode, /*train_mode=*/false, sample_rng,
                      nullptr);
        rate += bl.report.rate * batch.size();
        modified += bl.report.modified_rate * batch.size();
        distortion += bl.report.distortion * batch.size();
        if (!bl.report.rate_components.empty()) {
            if (comp_mean.empty()) comp_mean.assign(bl.report.rate_components.size(), 0.0);
            for (std::size_t j = 0; j < comp_mean.size(); ++j)
                comp_mean[j] += bl.report.rate_components[j] * batch.size();
        }
        n += batch.size();
    }
    LossReport rep;
    rep.rate = rate / n;
    rep.modified_rate = modified / n;
    rep.distortion = distortion / n;
    rep.beta = rcfg.beta(epoch);
    for (auto& c : comp_mean) c /= static_cast<double>(n);
    rep.rate_components = comp_mean;
    rep.objective =
        mode == TrainMode::Vae ? rep.modified_rate + rep.distortion : rep.distortion;
    return rep;
}

TrainResult sgd_train(SeqVae& model, const corpus::LabeledCorpus& corpus,
                      const TrainConfig& tcfg, const RateConfig& rcfg, TrainMode mode) {
    tcfg.validate();
    auto train_docs = corpus.docs_of(corpus::Split::Train);
    auto valid_docs = corpus.docs_of(corpus::Split::Valid);
    if (train_docs.empty() || valid_docs.empty())
        throw InsufficientData("sgd_train: corpus needs train and valid splits");

    TrainResult result;
    double lr = tcfg.lr;
    double best = std::numeric_limits<double>::infinity();
    int bad_streak = 0;
    int halvings = 0;
    std::vector<Mat> best_params;
    auto snapshot = [&]() {
        best_params.clear();
        for (const models::Param* p : model.params().all()) best_params.push_back(p->w);
    };
    auto restore = [&]() {
        if (best_params.empty()) return;
        auto ps = model.params().all();
        for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->w = best_params[i];
    };

    Rng sample_rng(tcfg.seed_sample);
    Rng dropout_rng(Rng::mix(tcfg.seed_sample, 0xD120ULL));

    for (int epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
        Rng order_rng(Rng::mix(tcfg.seed_data, static_cast<std::uint64_t>(epoch)));
        auto batches = make_batches(train_docs, tcfg.batch_size, order_rng);
        double ep_rate = 0.0, ep_dist = 0.0, ep_obj = 0.0;
        std::size_t n = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            model.params().zero_grads();
            Tape t;
            BatchLoss bl;
            try {
                bl = elbo_loss(t, model, batches[bi], rcfg, epoch, mode,
                               /*train_mode=*/true, sample_rng, &dropout_rng);
            } catch (const NumericalError& e) {
                throw DivergenceError(std::string("diverged: ") + e.what(), epoch,
                                      static_cast<int>(bi));
            }
            if (!std::isfinite(bl.report.objective))
                throw DivergenceError("non-finite training objective", epoch,
                                      static_cast<int>(bi));
            t.backward(bl.objective);
            const double norm = model.params().grad_norm();
            if (norm > tcfg.clip_norm) model.params().scale_grads(tcfg.clip_norm / norm);
            model.params().sgd_step(lr);
            ep_rate += bl.report.rate * batches[bi].size();
            ep_dist += bl.report.distortion * batches[bi].size();
            ep_obj += bl.report.objective * batches[bi].size();
            n += batches[bi].size();
        }
        result.history.push_back({epoch, ep_rate / n, ep_dist / n, ep_obj / n, lr, "train"});

        LossReport v = evaluate_split(model, corpus, corpus::Split::Valid, rcfg, epoch, mode,
                                      tcfg.seed_sample, tcfg.batch_size);
        result.history.push_back({epoch, v.rate, v.distortion, v.objective, lr, "valid"});
        result.epochs_run = epoch + 1;

        if (v.objective < best) {
            best = v.objective;
            result.best_epoch = epoch;
            result.best_valid_objective = best;
            result.final_valid = v;
            snapshot();
            bad_streak = 0;
        } else {
            ++bad_streak;
            if (bad_streak >= tcfg.patience) {
                bad_streak = 0;
                lr *= 0.5;
                ++halvings;
                if (halvings >= tcfg.max_halvings) break;
            }
        }
    }
    restore();
    return result;
}

namespace {

void copy_param(models::SeqVae& dst, const std::string& dst_name, const models::SeqVae& src,
                const std::string& src_name) {
    const models::Param* sp = src.params().find(src_name);
    models::Param* dp = dst.params().find(dst_name);
    if (!sp || !dp)
        throw ConfigError("pretrain: missing parameter " + src_name + " -> " + dst_name);
    if (sp->w.rows != dp->w.rows || sp->w.cols != dp->w.cols)
        throw ConfigError("pretrain: shape mismatch copying " + src_name + " " +
                          sp->w.shape_str() + " into " + dst_name + " " + dp->w.shape_str());
    dp->w = sp->w;
}

}  // namespace

PipelineResult pretrain_pipeline(PretrainKind kind, const models::ModelConfig& cfg,
                                 const corpus::LabeledCorpus& corpus, const TrainConfig& tcfg,
                                 const RateConfig& rcfg) {
    using models::DecoderKind;
    using models::EncoderKind;
    using models::ModelConfig;
    using models::SeqVae;

    auto offset_history = [](PipelineResult& pr, const std::vector<EpochStats>& h, int offset) {
        for (EpochStats e : h) {
            e.epoch += offset;
            pr.history.push_back(e);
        }
    };

    switch (kind) {
        case PretrainKind::None: {
            SeqVae model(cfg, tcfg.seed_init);
            TrainResult r = sgd_train(model, corpus, tcfg, rcfg, TrainMode::Vae);
            PipelineResult pr{std::move(model), {}, 0.0, r};
            offset_history(pr, r.history, 0);
            return pr;
        }
        case PretrainKind::PreAE: {
            SeqVae model(cfg, tcfg.seed_init);
            TrainResult r1 = sgd_train(model, corpus, tcfg, rcfg, TrainMode::AeMean);
            const int phase1_epochs = r1.epochs_run;
            const std::uint64_t dec_after_p1 = model.params().value_checksum("dec.");
            model.reinit_decoder(tcfg.seed_init);
            const std::uint64_t dec_at_p2 = model.params().value_checksum("dec.");
            const std::uint64_t enc_at_p2 = model.params().value_checksum("enc.");
            TrainResult r2 = sgd_train(model, corpus, tcfg, rcfg, TrainMode::Vae);
            PipelineResult pr{std::move(model), {}, r1.final_valid.rate, r2,
                              dec_after_p1,      dec_at_p2, enc_at_p2};
            offset_history(pr, r1.history, 0);
            offset_history(pr, r2.history, phase1_epochs);
            return pr;
        }
        case PretrainKind::PreLM: {
            if (cfg.encoder != EncoderKind::LstmAvg)
                throw ConfigError("pre_lm expects the lstm_avg encoder (mean-pooled LM states)");
            ModelConfig lm_cfg = cfg;
            lm_cfg.decoder = DecoderKind::LstmUnconditional;
            SeqVae lm(lm_cfg, tcfg.seed_init);
            TrainResult r1 = sgd_train(lm, corpus, tcfg, rcfg, TrainMode::Lm);
            const int phase1_epochs = r1.epochs_run;

            SeqVae model(cfg, tcfg.seed_init);
            copy_param(model, "enc.embed", lm, "dec.embed");
            copy_param(model, "enc.lstm.w", lm, "dec.lstm.w");
            copy_param(model, "enc.lstm.b", lm, "dec.lstm.b");
            model.params().set_trainable("enc.", false);
            const std::uint64_t dec_at_p2 = model.params().value_checksum("dec.");
            const std::uint64_t enc_at_p2 = model.params().value_checksum("enc.");
            TrainResult r2 = sgd_train(model, corpus, tcfg, rcfg, TrainMode::Vae);
            PipelineResult pr{std::move(model), {},       0.0, r2, lm.params().value_checksum("dec."),
                              dec_at_p2,        enc_at_p2};
            offset_history(pr, r1.history, 0);
            offset_history(pr, r2.history, phase1_epochs);
            return pr;
        }
        case PretrainKind::PreUni: {
            ModelConfig uni_cfg = cfg;
            uni_cfg.decoder = DecoderKind::Unigram;
            SeqVae uni(uni_cfg, tcfg.seed_init);
            TrainResult r1 = sgd_train(uni, corpus, tcfg, rcfg, TrainMode::Vae);
            const int phase1_epochs = r1.epochs_run;

            ModelConfig final_cfg = cfg;
            final_cfg.decoder = DecoderKind::LstmConditional;
            SeqVae model(final_cfg, tcfg.seed_init);
            copy_param(model, "enc.embed", uni, "enc.embed");
            if (cfg.encoder != EncoderKind::BowMax) {
                copy_param(model, "enc.lstm.w", uni, "enc.lstm.w");
                copy_param(model, "enc.lstm.b", uni, "enc.lstm.b");
            }
            for (const char* nm : {"lat.mu.w", "lat.mu.b", "lat.lv.w", "lat.lv.b"})
                copy_param(model, nm, uni, nm);
            model.params().set_trainable("enc.", false);
            model.params().set_trainable("lat.", false);
            const std::uint64_t dec_at_p2 = model.params().value_checksum("dec.");
            const std::uint64_t enc_at_p2 = model.params().value_checksum("enc.");
            TrainResult r2 = sgd_train(model, corpus, tcfg, rcfg, TrainMode::ReconSampled);
            PipelineResult pr{std::move(model), {},       r1.final_valid.rate, r2,
                              uni.params().value_checksum("uni."), dec_at_p2, enc_at_p2};
            offset_history(pr, r1.history, 0);
            offset_history(pr, r2.history, phase1_epochs);
            return pr;
        }
    }
    throw ConfigError("unknown pretraining kind");
}

}  // namespace vaelab::objectives
