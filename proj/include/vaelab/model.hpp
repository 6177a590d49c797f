#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vaelab/corpus.hpp"
#include "vaelab/tape.hpp"

namespace vaelab::models {

using num::Mat;
using num::Tape;
using num::Var;

enum class EncoderKind { LstmLast, LstmMax, LstmAvg, BowMax };
enum class DecoderKind { LstmConditional, Unigram, LstmUnconditional };

const char* encoder_name(EncoderKind k);
const char* decoder_name(DecoderKind k);
EncoderKind parse_encoder(const std::string& s);
DecoderKind parse_decoder(const std::string& s);

struct ModelConfig {
    EncoderKind encoder = EncoderKind::LstmLast;
    DecoderKind decoder = DecoderKind::LstmConditional;
    int vocab_size = 0;
    int embed_dim = 256;
    int hidden_dim = 512;  // LSTM state size, Appendix-style default
    int latent_dim = 16;
    int uni_hidden = 512;  // unigram decoder MLP width
    double dropout_p = 0.5;
    std::uint64_t vocab_hash = 0;

    // Pure language model: no encoder, no latent head.
    bool is_lm() const { return decoder == DecoderKind::LstmUnconditional; }
    int encoder_out_dim() const {
        return encoder == EncoderKind::BowMax ? embed_dim : hidden_dim;
    }
    void validate() const;
};

struct Param {
    std::string name;
    Mat w;
    Mat g;
    bool trainable = true;
};

class ParamSet {
  public:
    Param& add(const std::string& name, int rows, int cols);
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    std::vector<Param*> all();
    std::vector<const Param*> all() const;
    std::size_t count() const { return params_.size(); }

    void zero_grads();
    double grad_norm() const;
    void scale_grads(double s);
    void sgd_step(double lr);
    void set_trainable(const std::string& prefix, bool trainable);
    std::uint64_t value_checksum(const std::string& prefix) const;

  private:
    std::vector<std::unique_ptr<Param>> params_;
};

// One LSTM cell application. w is (in+hidden)x4*hidden with gate order
// [input | forget | candidate | output], b is 1x4*hidden.
struct LstmState {
    Var h, c;
};
LstmState lstm_step(Tape& t, Var x, LstmState s, Var w, Var b);

struct LatentPosterior {
    Var mu;
    Var logvar;  // sigma^2 = exp(logvar), positive by construction
};

// Per-position decoder output for one equal-length batch.
struct DecodeLoss {
    Var per_doc_nll;            // Bx1, total nats per document
    std::vector<Var> per_pos;   // Bx1 per predicted position
    int positions = 0;          // L+1 for recurrent decoders, L for unigram
};

class SeqVae {
  public:
    SeqVae(ModelConfig cfg, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // Batch builders. Every document in `docs` must have the same raw_len.
    Var encode_batch(Tape& t, const std::vector<const corpus::Document*>& docs) const;
    LatentPosterior variational(Tape& t, Var r) const;
    Var sample_latent(Tape& t, const LatentPosterior& post, Rng& rng) const;
    Var posterior_mean(const LatentPosterior& post) const { return post.mu; }

    // Teacher-forced reconstruction loss. `z` is ignored by the
    // unconditional decoder; pass an invalid Var for pure LMs.
    DecodeLoss decoder_nll(Tape& t, Var z, const std::vector<const corpus::Document*>& docs,
                           bool train_mode, Rng* dropout_rng) const;

    // Convenience: per-document posterior for one document (no gradients).
    void posterior_of(const corpus::Document& doc, Mat& mu, Mat& logvar) const;

    // Per-position pooled-candidate values for an equal-length batch: LSTM
    // hidden states h_i for recurrent encoders, word embeddings e_i for
    // BowMax. No gradients.
    std::vector<Mat> encoder_sequence(const std::vector<const corpus::Document*>& docs) const;

    // Reinitialize decoder-side parameters (PreAE phase 2). Encoder and
    // latent head are untouched.
    void reinit_decoder(std::uint64_t init_seed);

    std::uint64_t init_seed() const { return init_seed_; }

  private:
    ModelConfig cfg_;
    ParamSet params_;
    std::uint64_t init_seed_;

    Var pvar(Tape& t, const Param& p) const;
    void init_param(Param& p, Rng& rng, bool is_bias);
    void boost_latent_channel(bool decoder_only = false);
    std::vector<std::string> decoder_param_names() const;
    std::vector<std::string> encoder_param_names() const;
};

// Gaussian sampling floor: sigma is clamped below at sqrt(1e-8) when
// sampling so a collapsed variance cannot produce degenerate noise.
inline constexpr double kSigmaFloor = 1e-4;

struct CheckpointMeta {
    double lambda = 0.0;
    std::string flavor = "none";
    int anneal_epochs = 0;
    std::uint64_t seed_init = 0;
    std::uint64_t seed_data = 0;
    std::uint64_t seed_sample = 0;
    int epoch = 0;
    std::string phase = "single";
};

void save_checkpoint(const std::string& path, const SeqVae& model, const CheckpointMeta& meta);
SeqVae load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr);

}  // namespace vaelab::models
