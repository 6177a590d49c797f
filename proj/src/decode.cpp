#include "vaelab/decode.hpp"

#include <algorithm>
#include <cmath>

namespace vaelab::decode {

using corpus::kBos;
using corpus::kEos;
using corpus::kPad;
using models::SeqVae;
using num::Tape;
using num::Var;

LstmStepper::LstmStepper(const SeqVae& model, Mat z_row) : model_(model), z_(std::move(z_row)) {
    const auto& cfg = model_.config();
    if (cfg.decoder == models::DecoderKind::Unigram)
        throw ContractError("LstmStepper: unigram decoder cannot run autoregressive search");
    if (cfg.decoder == models::DecoderKind::LstmConditional) {
        if (z_.rows != 1 || z_.cols != cfg.latent_dim)
            throw ShapeError("LstmStepper: z " + z_.shape_str() + " vs latent dim " +
                             std::to_string(cfg.latent_dim));
    }
    reset(1);
}

void LstmStepper::reset(int n_rows) {
    h_ = Mat(n_rows, model_.config().hidden_dim);
    c_ = Mat(n_rows, model_.config().hidden_dim);
}

void LstmStepper::select_rows(const std::vector<int>& rows) {
    Mat nh(static_cast<int>(rows.size()), h_.cols);
    Mat nc(static_cast<int>(rows.size()), c_.cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < h_.cols; ++j) {
            nh(static_cast<int>(i), j) = h_(rows[i], j);
            nc(static_cast<int>(i), j) = c_(rows[i], j);
        }
    h_ = std::move(nh);
    c_ = std::move(nc);
}

Mat LstmStepper::step(const std::vector<int>& prev_tokens) {
    const int n = static_cast<int>(prev_tokens.size());
    if (n != h_.rows)
        throw ShapeError("LstmStepper: " + std::to_string(n) + " tokens for state " +
                         h_.shape_str());
    const auto& P = model_.params();
    const bool conditional = model_.config().decoder == models::DecoderKind::LstmConditional;

    Tape t;
    t.set_grad_enabled(false);
    Var x = t.gather_rows(t.leaf(P.find("dec.embed")->w, nullptr), prev_tokens);
    if (conditional) {
        Mat zrep(n, z_.cols);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < z_.cols; ++j) zrep(i, j) = z_(0, j);
        x = t.concat_cols(x, t.constant(std::move(zrep)));
    }
    models::LstmState s{t.constant(h_), t.constant(c_)};
    s = models::lstm_step(t, x, s, t.leaf(P.find("dec.lstm.w")->w, nullptr),
                          t.leaf(P.find("dec.lstm.b")->w, nullptr));
    Var logp = t.log_softmax_rows(t.add_rowvec(
        t.matmul(s.h, t.leaf(P.find("dec.out.w")->w, nullptr)),
        t.leaf(P.find("dec.out.b")->w, nullptr)));
    h_ = t.val(s.h);
    c_ = t.val(s.c);
    return t.val(logp);
}

BeamHypothesis greedy_decode(StepModel& m, int max_len) {
    if (max_len < 1) throw ConfigError("greedy_decode: max_len must be >= 1");
    m.reset(1);
    BeamHypothesis hyp;
    int prev = kBos;
    for (int step = 0; step < max_len; ++step) {
        Mat lp = m.step({prev});
        int best = -1;
        for (int v = 0; v < lp.cols; ++v) {
            if (v == kBos || v == kPad) continue;
            if (best < 0 || lp(0, v) > lp(0, best)) best = v;  // strict >: ties keep lowest id
        }
        hyp.logprob += lp(0, best);
        if (best == kEos) {
            hyp.finished = true;
            break;
        }
        hyp.tokens.push_back(best);
        prev = best;
    }
    return hyp;
}

namespace {

// score desc, then lexicographically smaller token sequence.
bool better(double score_a, const std::vector<int>& seq_a, double score_b,
            const std::vector<int>& seq_b) {
    if (score_a != score_b) return score_a > score_b;
    return seq_a < seq_b;
}

}  // namespace

BeamHypothesis beam_decode(StepModel& m, int beam_size, int max_len) {
    if (beam_size < 1) throw ConfigError("beam_decode: beam_size must be >= 1");
    if (max_len < 1) throw ConfigError("beam_decode: max_len must be >= 1");
    m.reset(1);

    struct Live {
        std::vector<int> tokens;
        double score = 0.0;
        int prev = kBos;
    };
    std::vector<Live> live(1);
    bool have_best = false;
    BeamHypothesis best;

    for (int step = 0; step < max_len && !live.empty(); ++step) {
        std::vector<int> prev_tokens;
        prev_tokens.reserve(live.size());
        for (const auto& h : live) prev_tokens.push_back(h.prev);
        Mat lp = m.step(prev_tokens);

        // All expansions, EOS included, compete for the beam slots; EOS
        // candidates that make the cut retire into the finished pool. This
        // is what makes beam_size=1 coincide with greedy decoding.
        struct Cand {
            int parent;
            int token;  // kEos marks a finishing candidate
            double score;
        };
        std::vector<Cand> cands;
        cands.reserve(live.size() * static_cast<std::size_t>(lp.cols));
        for (std::size_t i = 0; i < live.size(); ++i)
            for (int v = 0; v < lp.cols; ++v) {
                if (v == kBos || v == kPad) continue;
                cands.push_back({static_cast<int>(i), v, live[i].score + lp(static_cast<int>(i), v)});
            }
        // Candidate key for ties: the output sequence it denotes (EOS keeps
        // the parent sequence, which compares before its extensions).
        auto cand_key = [&](const Cand& c) {
            std::vector<int> seq = live[c.parent].tokens;
            if (c.token != kEos) seq.push_back(c.token);
            return seq;
        };
        std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            return cand_key(a) < cand_key(b);
        });
        if (static_cast<int>(cands.size()) > beam_size) cands.resize(beam_size);

        std::vector<int> parent_rows;
        std::vector<Live> next;
        for (const Cand& c : cands) {
            if (c.token == kEos) {
                if (!have_best ||
                    better(c.score, live[c.parent].tokens, best.logprob, best.tokens)) {
                    best = {live[c.parent].tokens, c.score, true};
                    have_best = true;
                }
                continue;
            }
            Live nl;
            nl.tokens = live[c.parent].tokens;
            nl.tokens.push_back(c.token);
            nl.score = c.score;
            nl.prev = c.token;
            parent_rows.push_back(c.parent);
            next.push_back(std::move(nl));
        }
        m.select_rows(parent_rows);
        live = std::move(next);

        if (have_best && !live.empty()) {
            // Scores only decrease as steps add log-probs; once every live
            // hypothesis is strictly below the best finished score, stop.
            double max_live = live[0].score;
            for (const auto& h : live) max_live = std::max(max_live, h.score);
            if (max_live < best.logprob) break;
        }
    }

    if (!have_best) {
        // No hypothesis reached EOS within max_len: best live one wins.
        if (live.empty()) throw ContractError("beam_decode: no hypotheses");
        const Live* pick = &live[0];
        for (const auto& h : live)
            if (better(h.score, h.tokens, pick->score, pick->tokens)) pick = &h;
        return {pick->tokens, pick->score, false};
    }
    return best;
}

Strategy parse_strategy(const std::string& s) {
    if (s == "greedy") return Strategy::Greedy;
    if (s == "beam") return Strategy::Beam;
    throw ConfigError("unknown decode strategy: " + s);
}

const char* strategy_name(Strategy s) {
    return s == Strategy::Greedy ? "greedy" : "beam";
}

Mat sample_z_value(const Mat& mu, const Mat& logvar, Rng& rng) {
    Mat z = mu;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double sigma = std::max(std::exp(0.5 * logvar.a[i]), models::kSigmaFloor);
        z.a[i] += sigma * rng.normal();
    }
    return z;
}

BeamHypothesis reconstruct(const SeqVae& model, const corpus::Document& doc, Strategy strategy,
                           int beam_size, int max_len, std::uint64_t z_seed) {
    Mat mu, logvar;
    model.posterior_of(doc, mu, logvar);
    Rng rng(z_seed);
    Mat z = sample_z_value(mu, logvar, rng);
    LstmStepper stepper(model, std::move(z));
    return strategy == Strategy::Greedy ? greedy_decode(stepper, max_len)
                                        : beam_decode(stepper, beam_size, max_len);
}

int default_max_len(const corpus::LabeledCorpus& corpus) {
    std::vector<int> lens;
    lens.reserve(corpus.docs.size());
    for (const auto& d : corpus.docs) lens.push_back(d.raw_len());
    if (lens.empty()) throw InsufficientData("default_max_len: empty corpus");
    std::sort(lens.begin(), lens.end());
    const std::size_t idx =
        std::min(lens.size() - 1, static_cast<std::size_t>(0.99 * lens.size()));
    return std::max(1, static_cast<int>(std::ceil(1.5 * lens[idx])));
}

}  // namespace vaelab::decode
