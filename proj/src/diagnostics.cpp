#include "vaelab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vaelab/decode.hpp"
#include "vaelab/objectives.hpp"

namespace vaelab::diagnostics {

using corpus::Document;
using corpus::LabeledCorpus;
using corpus::Split;
using models::SeqVae;
using num::Tape;
using num::Var;

namespace {

// Documents of exactly length L, in corpus order.
std::vector<const Document*> docs_of_length(const LabeledCorpus& corpus, Split split, int L) {
    std::vector<const Document*> out;
    for (const auto& d : corpus.docs)
        if (d.split == split && d.raw_len() == L) out.push_back(&d);
    return out;
}

double gauss_logpdf(double x, double mean, double sigma) {
    static const double kLog2Pi = 1.8378770664093454835606594728112;
    const double u = (x - mean) / sigma;
    return -0.5 * (kLog2Pi + u * u) - std::log(sigma);
}

}  // namespace

LossProfile position_loss_profile(const SeqVae& model, const LabeledCorpus& corpus, Split split,
                                  int L, std::uint64_t z_seed) {
    auto docs = docs_of_length(corpus, split, L);
    if (docs.empty())
        throw InsufficientData("position_loss_profile: no documents of length " +
                               std::to_string(L));
    LossProfile prof;
    prof.doc_len = L;
    prof.n_docs = static_cast<int>(docs.size());

    Rng z_rng(Rng::mix(z_seed, static_cast<std::uint64_t>(L)));
    const int batch = 64;
    std::vector<double> sums;
    for (std::size_t off = 0; off < docs.size(); off += batch) {
        std::vector<const Document*> chunk(
            docs.begin() + off,
            docs.begin() + std::min(docs.size(), off + static_cast<std::size_t>(batch)));
        Tape t;
        t.set_grad_enabled(false);
        Var z{};
        if (!model.config().is_lm()) {
            models::LatentPosterior post = model.variational(t, model.encode_batch(t, chunk));
            z = model.sample_latent(t, post, z_rng);
        }
        models::DecodeLoss dl = model.decoder_nll(t, z, chunk, false, nullptr);
        if (sums.empty()) sums.assign(dl.per_pos.size(), 0.0);
        for (std::size_t p = 0; p < dl.per_pos.size(); ++p) {
            const num::Mat& col = t.val(dl.per_pos[p]);
            for (double v : col.a) sums[p] += v;
        }
    }
    prof.per_position.resize(sums.size());
    for (std::size_t p = 0; p < sums.size(); ++p)
        prof.per_position[p] = sums[p] / prof.n_docs;
    return prof;
}

std::vector<double> relative_improvement(const LossProfile& profile,
                                         const LossProfile& baseline) {
    if (profile.per_position.size() != baseline.per_position.size())
        throw ShapeError("relative_improvement: profile length " +
                         std::to_string(profile.per_position.size()) + " vs baseline " +
                         std::to_string(baseline.per_position.size()));
    std::vector<double> out(profile.per_position.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double b = baseline.per_position[i];
        if (b <= 0.0)
            throw NumericalError("relative_improvement: baseline entry " + std::to_string(i) +
                                 " is not positive");
        out[i] = std::max(b - profile.per_position[i], 0.0) / b;
    }
    return out;
}

MemorizationReport memorization_metrics(const std::vector<std::vector<int>>& sources,
                                        const std::vector<std::vector<int>>& reconstructions) {
    if (sources.size() != reconstructions.size())
        throw ShapeError("memorization_metrics: " + std::to_string(sources.size()) +
                         " sources vs " + std::to_string(reconstructions.size()) +
                         " reconstructions");
    if (sources.empty()) throw InsufficientData("memorization_metrics: no pairs");
    MemorizationReport rep;
    rep.n_pairs = static_cast<int>(sources.size());
    int first = 0, len = 0, mid = 0;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto& s = sources[i];
        const auto& r = reconstructions[i];
        if (!s.empty() && !r.empty() && s[0] == r[0]) ++first;
        if (s.size() == r.size()) ++len;
        if (!s.empty()) {
            const std::size_t pos = (s.size() + 1) / 2;  // 1-based ceil(L/2)
            if (r.size() >= pos && s[pos - 1] == r[pos - 1]) ++mid;
        }
    }
    rep.first_word_acc = static_cast<double>(first) / rep.n_pairs;
    rep.length_match = static_cast<double>(len) / rep.n_pairs;
    rep.mid_word_acc = static_cast<double>(mid) / rep.n_pairs;
    return rep;
}

MemorizationReport label_oracle_baseline(const LabeledCorpus& corpus) {
    const int C = corpus.num_classes;
    // Modal first word and modal length per class on the train split,
    // ties to the smaller value.
    std::vector<std::map<int, int>> first_counts(C), len_counts(C);
    for (const auto& d : corpus.docs) {
        if (d.split != Split::Train) continue;
        ++first_counts[d.label][d.token_ids[0]];
        ++len_counts[d.label][d.raw_len()];
    }
    std::vector<int> modal_first(C, -1), modal_len(C, -1);
    for (int c = 0; c < C; ++c) {
        if (first_counts[c].empty())
            throw InsufficientData("label_oracle_baseline: class " + std::to_string(c) +
                                   " has no train documents");
        int best_n = -1;
        for (const auto& [tok, n] : first_counts[c])
            if (n > best_n) {
                best_n = n;
                modal_first[c] = tok;
            }
        best_n = -1;
        for (const auto& [l, n] : len_counts[c])
            if (n > best_n) {
                best_n = n;
                modal_len[c] = l;
            }
    }
    std::vector<std::vector<int>> sources, pseudo;
    for (const auto& d : corpus.docs) {
        if (d.split != Split::Test) continue;
        sources.push_back(d.token_ids);
        std::vector<int> p(modal_len[d.label], corpus::kUnk);
        p[0] = modal_first[d.label];
        pseudo.push_back(std::move(p));
    }
    if (sources.empty()) throw InsufficientData("label_oracle_baseline: empty test split");
    return memorization_metrics(sources, pseudo);
}

ArgmaxPositionStats argmax_position_stats(const SeqVae& model, const LabeledCorpus& corpus,
                                          Split split, double threshold) {
    const auto enc = model.config().encoder;
    if (enc != models::EncoderKind::LstmMax && enc != models::EncoderKind::BowMax)
        throw ConfigError("argmax_position_stats: encoder must pool with max (lstm_max or "
                          "bow_max)");
    auto docs = corpus.docs_of(split);
    if (docs.empty()) throw InsufficientData("argmax_position_stats: empty split");

    const int dim = model.config().encoder_out_dim();
    // position (1-based) counts per component
    std::vector<std::map<int, int>> counts(dim);

    // group by length so batches are well-formed
    std::map<int, std::vector<const Document*>> by_len;
    for (const auto* d : docs) by_len[d->raw_len()].push_back(d);
    int n_docs = 0;
    for (const auto& [len, group] : by_len) {
        const int batch = 64;
        for (std::size_t off = 0; off < group.size(); off += batch) {
            std::vector<const Document*> chunk(
                group.begin() + off,
                group.begin() + std::min(group.size(), off + static_cast<std::size_t>(batch)));
            std::vector<num::Mat> seq = model.encoder_sequence(chunk);
            const int B = static_cast<int>(chunk.size());
            for (int b = 0; b < B; ++b) {
                for (int j = 0; j < dim; ++j) {
                    int arg = 0;
                    double best = seq[0](b, j);
                    for (int p = 1; p < static_cast<int>(seq.size()); ++p)
                        if (seq[p](b, j) > best) {
                            best = seq[p](b, j);
                            arg = p;
                        }
                    ++counts[j][arg + 1];
                }
            }
            n_docs += B;
        }
    }

    ArgmaxPositionStats st;
    st.threshold = threshold;
    st.n_docs = n_docs;
    st.modal_position.resize(dim);
    st.fraction.resize(dim);
    for (int j = 0; j < dim; ++j) {
        int best_pos = 0, best_n = -1;
        for (const auto& [pos, n] : counts[j])
            if (n > best_n) {
                best_n = n;
                best_pos = pos;
            }
        st.modal_position[j] = best_pos;
        st.fraction[j] = static_cast<double>(best_n) / n_docs;
        if (st.fraction[j] >= threshold) {
            ++st.consistent_count;
            ++st.histogram[best_pos];
        }
    }
    return st;
}

double iwae_nll(const SeqVae& model, const Document& doc, int K, std::uint64_t seed) {
    if (K < 1) throw ConfigError("iwae_nll: K must be >= 1");
    if (model.config().is_lm()) throw ContractError("iwae_nll: model has no latent");
    Mat mu, logvar;
    model.posterior_of(doc, mu, logvar);
    const int d = mu.cols;

    Rng rng(seed);
    Mat z(K, d);
    std::vector<double> log_w(K, 0.0);
    for (int k = 0; k < K; ++k) {
        for (int j = 0; j < d; ++j) {
            const double sigma = std::max(std::exp(0.5 * logvar(0, j)), models::kSigmaFloor);
            const double zj = mu(0, j) + sigma * rng.normal();
            z(k, j) = zj;
            // log p(z) - log q(z|x), with q exactly the sampling density
            log_w[k] += gauss_logpdf(zj, 0.0, 1.0) - gauss_logpdf(zj, mu(0, j), sigma);
        }
    }
    // - log p(x|z_k) in one batched teacher-forced pass
    std::vector<const Document*> reps(K, &doc);
    Tape t;
    t.set_grad_enabled(false);
    models::DecodeLoss dl = model.decoder_nll(t, t.constant(z), reps, false, nullptr);
    const Mat& nll = t.val(dl.per_doc_nll);
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
        log_w[k] -= nll(k, 0);
        if (!std::isfinite(log_w[k])) throw NumericalError("iwae_nll: non-finite weight");
        mx = std::max(mx, log_w[k]);
    }
    double se = 0.0;
    for (int k = 0; k < K; ++k) se += std::exp(log_w[k] - mx);
    return -(mx + std::log(se / K));
}

PerplexityReport corpus_ppl(const SeqVae& model, const LabeledCorpus& corpus, Split split, int K,
                            std::uint64_t seed) {
    auto docs = corpus.docs_of(split);
    if (docs.empty()) throw InsufficientData("corpus_ppl: empty split");
    const bool lstm_dec = model.config().decoder != models::DecoderKind::Unigram;
    PerplexityReport rep;
    std::uint64_t idx = 0;
    for (const auto* d : docs) {
        rep.total_nats += iwae_nll(model, *d, K, Rng::mix(seed, idx++));
        rep.total_tokens += d->raw_len() + (lstm_dec ? 1 : 0);
    }
    rep.ppl = std::exp(rep.total_nats / static_cast<double>(rep.total_tokens));
    return rep;
}

}  // namespace vaelab::diagnostics
