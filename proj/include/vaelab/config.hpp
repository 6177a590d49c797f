#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vaelab/corpus.hpp"
#include "vaelab/decode.hpp"
#include "vaelab/model.hpp"
#include "vaelab/objectives.hpp"

namespace vaelab::cli {

// Flat "key = value" configuration text; '#' starts a comment. Unknown keys
// are errors, not warnings.
std::map<std::string, std::string> parse_flat_config(const std::string& text);

struct ExperimentConfig {
    // corpus
    std::string corpus_source = "synth";  // synth | tsv
    corpus::SynthSpec synth;
    std::uint64_t synth_seed = 1;
    std::string tsv_train, tsv_valid, tsv_test;
    corpus::LoadOptions load;

    // model and grid
    models::EncoderKind encoder = models::EncoderKind::LstmLast;
    models::DecoderKind decoder = models::DecoderKind::LstmConditional;
    objectives::PretrainKind pretrain = objectives::PretrainKind::None;
    int embed_dim = 256;
    int hidden_dim = 512;
    int uni_hidden = 512;
    double dropout_p = 0.5;
    std::vector<double> lambda_list = {8.0};
    std::vector<int> d_list = {16};

    // training
    double lr = 0.5;
    double clip_norm = 5.0;
    int batch_size = 64;
    int patience = 2;
    int max_halvings = 4;
    int max_epochs = 200;
    objectives::FreeBitsFlavor flavor = objectives::FreeBitsFlavor::Delta;
    int anneal_epochs = 0;
    bool train_lm_baseline = true;
    std::vector<std::uint64_t> seeds_init = {1};
    std::vector<std::uint64_t> seeds_data;    // defaults to seeds_init
    std::vector<std::uint64_t> seeds_sample;  // defaults to seeds_init

    // decoding
    decode::Strategy strategy = decode::Strategy::Beam;
    int beam_size = 5;
    double max_len_factor = 1.5;
    std::uint64_t z_seed = 7;

    // diagnostics
    int profile_len = 0;  // 0: modal test length
    int iwae_k = 500;
    int iwae_docs = 0;  // 0: whole split

    // ssl
    std::vector<int> ssl_regimes = {5, 50, 500};
    int ssl_g = 5;
    bool ssl_full = false;

    std::string out_dir = "runs";

    // Canonical serialization: sorted keys, one per line. The run id is the
    // content hash of this text.
    std::string resolved_text() const;
    std::string run_id() const;

    objectives::TrainConfig train_config(int seed_index) const;
    models::ModelConfig model_config(int latent_dim, int vocab_size,
                                     std::uint64_t vocab_hash) const;
    void validate() const;
};

ExperimentConfig config_from_text(const std::string& text);
ExperimentConfig config_from_file(const std::string& path);

// Apply --seed-offset: shifts every seed list entry and the corpus/z seeds.
void apply_seed_offset(ExperimentConfig& cfg, std::uint64_t offset);

std::string format_double(double v);

}  // namespace vaelab::cli
