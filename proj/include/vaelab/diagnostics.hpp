#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vaelab/corpus.hpp"
#include "vaelab/model.hpp"

namespace vaelab::diagnostics {

using num::Mat;

struct LossProfile {
    int doc_len = 0;                  // L; only documents of exactly this length
    std::vector<double> per_position; // mean nats per predicted position
    int n_docs = 0;
    std::string model_id;
};

// Mean teacher-forced reconstruction loss per position over documents of
// length L, one seeded posterior sample per document (pure LMs take none).
LossProfile position_loss_profile(const models::SeqVae& model,
                                  const corpus::LabeledCorpus& corpus, corpus::Split split,
                                  int L, std::uint64_t z_seed);

// Clamped fractional reduction versus an unconditional-LM baseline profile:
// max(baseline - profile, 0) / baseline, per position.
std::vector<double> relative_improvement(const LossProfile& profile,
                                         const LossProfile& baseline);

struct MemorizationReport {
    double first_word_acc = 0.0;
    double length_match = 0.0;
    double mid_word_acc = 0.0;  // token match at 1-based position ceil(L/2)
    int n_pairs = 0;
};

MemorizationReport memorization_metrics(const std::vector<std::vector<int>>& sources,
                                        const std::vector<std::vector<int>>& reconstructions);

// Per class, the modal first word and modal length from the train split are
// emitted as a pseudo-reconstruction (UNK elsewhere) and scored on the test
// split. Mimics a latent that encodes exactly the label.
MemorizationReport label_oracle_baseline(const corpus::LabeledCorpus& corpus);

struct ArgmaxPositionStats {
    std::vector<int> modal_position;   // per component, 1-based position of the mode
    std::vector<double> fraction;      // fraction of documents peaking there
    int consistent_count = 0;          // components with fraction >= threshold
    std::map<int, int> histogram;      // modal position -> count among consistent
    double threshold = 0.8;
    int n_docs = 0;
};

// Which pooled components peak at fixed positions. Encoder must be LstmMax
// or BowMax.
ArgmaxPositionStats argmax_position_stats(const models::SeqVae& model,
                                          const corpus::LabeledCorpus& corpus,
                                          corpus::Split split, double threshold);

// Importance-weighted NLL estimate: -log (1/K) sum_k p(x|z_k) p(z_k) / q(z_k|x),
// computed in log space.
double iwae_nll(const models::SeqVae& model, const corpus::Document& doc, int K,
                std::uint64_t seed);

struct PerplexityReport {
    double total_nats = 0.0;
    std::int64_t total_tokens = 0;  // predicted positions, EOS included for LSTM decoders
    double ppl = 0.0;
};

PerplexityReport corpus_ppl(const models::SeqVae& model, const corpus::LabeledCorpus& corpus,
                            corpus::Split split, int K, std::uint64_t seed);

}  // namespace vaelab::diagnostics
