#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaelab/corpus.hpp"
#include "vaelab/model.hpp"

namespace vaelab::decode {

using num::Mat;

// Autoregressive decoding surface, batched over parallel hypotheses that
// share one latent vector. Implemented by the LSTM decoders and by hand-set
// toy models in tests.
class StepModel {
  public:
    virtual ~StepModel() = default;
    virtual int vocab_size() const = 0;
    // Start over with n parallel hypothesis rows.
    virtual void reset(int n_rows) = 0;
    // Keep/reorder state rows after beam selection.
    virtual void select_rows(const std::vector<int>& rows) = 0;
    // Advance every row by one step on its previous token (BOS first).
    // Returns per-row log-probabilities, (n x V).
    virtual Mat step(const std::vector<int>& prev_tokens) = 0;
};

// LSTM decoder of a SeqVae as a StepModel. The latent row is ignored by
// unconditional decoders.
class LstmStepper : public StepModel {
  public:
    LstmStepper(const models::SeqVae& model, Mat z_row);
    int vocab_size() const override { return model_.config().vocab_size; }
    void reset(int n_rows) override;
    void select_rows(const std::vector<int>& rows) override;
    Mat step(const std::vector<int>& prev_tokens) override;

  private:
    const models::SeqVae& model_;
    Mat z_;  // 1 x d
    Mat h_, c_;
};

struct BeamHypothesis {
    std::vector<int> tokens;  // emitted tokens, EOS excluded
    double logprob = 0.0;     // exact sum of chosen per-step log-probs
    bool finished = false;    // last emission was EOS
};

// Argmax decoding, ties to the lowest token id; stops at EOS or max_len.
BeamHypothesis greedy_decode(StepModel& m, int max_len);

// Length-unnormalized beam search. Finished hypotheses retire into a pool
// without occupying beam slots; the best finished hypothesis wins, falling
// back to the best live one at max_len. All ties break toward the
// lexicographically smaller token-id sequence.
BeamHypothesis beam_decode(StepModel& m, int beam_size, int max_len);

enum class Strategy { Greedy, Beam };
Strategy parse_strategy(const std::string& s);
const char* strategy_name(Strategy s);

// Value-level reparameterized draw, matching the tape path including the
// sigma floor.
Mat sample_z_value(const Mat& mu, const Mat& logvar, Rng& rng);

// encode -> one seeded posterior sample -> decode.
BeamHypothesis reconstruct(const models::SeqVae& model, const corpus::Document& doc,
                           Strategy strategy, int beam_size, int max_len, std::uint64_t z_seed);

// 1.5x the 99th-percentile document length of the corpus.
int default_max_len(const corpus::LabeledCorpus& corpus);

}  // namespace vaelab::decode
