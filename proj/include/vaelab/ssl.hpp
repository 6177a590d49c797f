#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vaelab/corpus.hpp"
#include "vaelab/decode.hpp"
#include "vaelab/model.hpp"

namespace vaelab::ssl {

using num::Mat;

// ---- cross-validation ----

struct Fold {
    std::vector<int> train_idx;
    std::vector<int> val_idx;
};

// `repeats` independent stratified partitions into k folds; per-class counts
// across the folds of one repeat differ by at most one.
std::vector<Fold> stratified_kfold(const std::vector<int>& labels, int k, int repeats,
                                   std::uint64_t seed);

// ---- classifiers ----

struct LinearClassifier {
    Mat W;  // D x C
    Mat b;  // 1 x C
    int predict(const Mat& X, int row) const;
    std::vector<int> predict_all(const Mat& X) const;
    double final_loss = 0.0;
};

// Multinomial logistic regression, cross-entropy + (1/C)*0.5*||W||^2 (bias
// unregularized), deterministic full-batch gradient descent with backtracking.
LinearClassifier train_logreg(const Mat& X, const std::vector<int>& y, int num_classes,
                              double C);

struct MlpClassifier {
    Mat w1, b1, w2, b2;
    std::vector<int> predict_all(const Mat& X) const;
    int best_epoch = -1;
    std::vector<double> val_history;  // macro-F1 per epoch, for the replay check
};

struct MlpConfig {
    int hidden = 128;
    double lr = 0.1;
    int max_epochs = 60;
    int patience = 5;
    int batch_size = 32;
    std::uint64_t seed = 1;
};

// One-hidden-layer ReLU probe with early stopping on validation macro-F1.
MlpClassifier train_mlp_probe(const Mat& X_train, const std::vector<int>& y_train,
                              const Mat& X_val, const std::vector<int>& y_val, int num_classes,
                              const MlpConfig& cfg = {});

// Unweighted mean of per-class F1; a class absent from both predictions and
// golds contributes 0.
double macro_f1(const std::vector<int>& predictions, const std::vector<int>& golds,
                int num_classes);

// ---- features ----

// Sampled-z features. The SSL protocol consumes only this type; posterior
// means live in MuFeatures and cannot enter the protocol path by
// construction.
struct ZFeatures {
    Mat X;
    std::vector<int> labels;
};
struct MuFeatures {
    Mat X;
    std::vector<int> labels;
};

ZFeatures z_features(const models::SeqVae& model,
                     const std::vector<const corpus::Document*>& docs, std::uint64_t z_seed);
MuFeatures mu_features(const models::SeqVae& model,
                       const std::vector<const corpus::Document*>& docs);

// ---- variance decomposition ----

struct VarianceReport {
    double mean = 0.0;
    double sigma_init = 0.0;
    double sigma_resid = 0.0;
};

// F is g x s (subsample seed x init seed).
VarianceReport variance_decomposition(const Mat& F);

// ---- protocol ----

struct GridPoint {
    double lambda = 0.0;
    int latent_dim = 0;
    std::string key() const;
};

// One trained encoder per (grid point, init seed).
struct EncoderGrid {
    std::vector<GridPoint> points;
    int num_seeds = 0;
    std::function<const models::SeqVae&(int point, int seed)> model;
};

struct SslConfig {
    int g = 5;              // subsample seeds per regime
    int kfolds = 5;         // stratified CV folds (leave-one-out fallback below)
    int repeats = 2;
    std::vector<double> c_grid = {0.01, 0.1, 1.0, 10.0, 100.0};
    std::uint64_t subsample_seed = 101;
    std::uint64_t z_seed = 202;
    std::uint64_t cv_seed = 303;
    MlpConfig mlp;  // full-data regime probe
};

struct SslResult {
    Mat F;  // g x s macro-F1
    VarianceReport variance;
    std::vector<std::string> selected_model;  // per subsample i, grid key
    std::vector<double> selected_C;           // per (i, j), row-major
    int n_per_class = 0;                      // 0 = full-data regime
};

// The probing protocol: per subsample, classifier hyperparameter by repeated
// stratified CV, encoder hyperparameter by seed-averaged CV score, final
// macro-F1 on the test split. n_per_class == 0 runs the full-data regime
// with the MLP probe.
SslResult ssl_protocol(const EncoderGrid& grid, const corpus::LabeledCorpus& corpus,
                       int n_per_class, const SslConfig& cfg);

// Appendix-style mean-vs-sample comparison for one model: macro-F1 of a
// logreg probe (CV-selected C) on z features and on mu features.
struct MuVsZReport {
    double f1_z = 0.0;
    double f1_mu = 0.0;
};
MuVsZReport mu_vs_z_probe(const models::SeqVae& model, const corpus::LabeledCorpus& corpus,
                          int n_per_class, const SslConfig& cfg);

// Empirical chance level: macro-F1 of label-permuted predictions.
double permutation_chance_f1(const std::vector<int>& golds, int num_classes,
                             std::uint64_t seed, int trials = 32);

// ---- reference classifiers and agreement ----

struct BowClassifier {
    Mat embed;  // V x dim
    Mat W;      // dim x C
    Mat b;      // 1 x C
    int first_k = 0;  // 0: all words
    int predict(const std::vector<int>& token_ids) const;
    double test_f1 = 0.0;
};

// Averaged-embedding linear classifier over the first k words (0 = all),
// fastText-style, trained on the train split with the valid split for model
// selection; test_f1 holds its macro-F1 on the test split.
BowClassifier bow_reference_classifier(const corpus::LabeledCorpus& corpus, int first_k,
                                       int embed_dim = 200, std::uint64_t seed = 1);

// Macro-F1 between gold labels and the reference classifier's labels on the
// model's reconstructions of the test split.
double agreement(const models::SeqVae& model, const corpus::LabeledCorpus& corpus,
                 const BowClassifier& clf, decode::Strategy strategy, int beam_size,
                 int max_len, std::uint64_t z_seed);

}  // namespace vaelab::ssl
