#include "vaelab/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vaelab/objectives.hpp"
#include "vaelab/tape.hpp"

namespace vaelab::ssl {

using corpus::Document;
using corpus::LabeledCorpus;
using corpus::Split;
using models::SeqVae;
using num::Tape;
using num::Var;

// ---- cross-validation ----

std::vector<Fold> stratified_kfold(const std::vector<int>& labels, int k, int repeats,
                                   std::uint64_t seed) {
    if (k < 2) throw ConfigError("stratified_kfold: k must be >= 2");
    if (repeats < 1) throw ConfigError("stratified_kfold: repeats must be >= 1");
    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(static_cast<int>(i));
    for (const auto& [c, idx] : by_class)
        if (static_cast<int>(idx.size()) < k)
            throw InsufficientData("stratified_kfold: class " + std::to_string(c) + " has " +
                                   std::to_string(idx.size()) + " items for k=" +
                                   std::to_string(k));
    std::vector<Fold> out;
    for (int r = 0; r < repeats; ++r) {
        std::vector<std::vector<int>> folds(k);
        for (auto& [c, idx] : by_class) {
            std::vector<int> order = idx;
            Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(r) * 10007 +
                                       static_cast<std::uint64_t>(c)));
            rng.shuffle(order);
            for (std::size_t i = 0; i < order.size(); ++i)
                folds[i % k].push_back(order[i]);
        }
        for (int f = 0; f < k; ++f) {
            Fold fold;
            fold.val_idx = folds[f];
            for (int g = 0; g < k; ++g)
                if (g != f)
                    fold.train_idx.insert(fold.train_idx.end(), folds[g].begin(),
                                          folds[g].end());
            std::sort(fold.val_idx.begin(), fold.val_idx.end());
            std::sort(fold.train_idx.begin(), fold.train_idx.end());
            out.push_back(std::move(fold));
        }
    }
    return out;
}

// ---- logistic regression ----

namespace {

Mat rows_of(const Mat& X, const std::vector<int>& idx) {
    Mat out(static_cast<int>(idx.size()), X.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < X.cols; ++j) out(static_cast<int>(i), j) = X(idx[i], j);
    return out;
}

template <typename T>
std::vector<T> subset(const std::vector<T>& v, const std::vector<int>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(v[i]);
    return out;
}

// softmax row probabilities into P; returns total cross-entropy
double ce_probs(const Mat& X, const Mat& W, const Mat& b, const std::vector<int>& y, Mat& P) {
    P = Mat(X.rows, W.cols);
    num::matmul_into(X, W, P);
    double loss = 0.0;
    for (int i = 0; i < P.rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < P.cols; ++c) {
            P(i, c) += b(0, c);
            mx = std::max(mx, P(i, c));
        }
        double se = 0.0;
        for (int c = 0; c < P.cols; ++c) se += std::exp(P(i, c) - mx);
        const double lse = mx + std::log(se);
        loss -= P(i, y[i]) - lse;
        for (int c = 0; c < P.cols; ++c) P(i, c) = std::exp(P(i, c) - lse);
    }
    return loss;
}

}  // namespace

int LinearClassifier::predict(const Mat& X, int row) const {
    int best = 0;
    double bv = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < W.cols; ++c) {
        double s = b(0, c);
        for (int j = 0; j < X.cols; ++j) s += X(row, j) * W(j, c);
        if (s > bv) {
            bv = s;
            best = c;
        }
    }
    return best;
}

std::vector<int> LinearClassifier::predict_all(const Mat& X) const {
    std::vector<int> out(X.rows);
    for (int i = 0; i < X.rows; ++i) out[i] = predict(X, i);
    return out;
}

LinearClassifier train_logreg(const Mat& X, const std::vector<int>& y, int num_classes,
                              double C) {
    if (static_cast<int>(y.size()) != X.rows)
        throw ShapeError("train_logreg: " + std::to_string(y.size()) + " labels for " +
                         X.shape_str());
    if (C <= 0.0) throw ConfigError("train_logreg: C must be positive");
    {
        std::vector<bool> seen(num_classes, false);
        int distinct = 0;
        for (int v : y) {
            if (v < 0 || v >= num_classes) throw ContractError("train_logreg: label out of range");
            if (!seen[v]) {
                seen[v] = true;
                ++distinct;
            }
        }
        if (distinct < 2) throw DegenerateLabels("train_logreg: single-class input");
    }
    for (double v : X.a)
        if (!std::isfinite(v)) throw NumericalError("train_logreg: non-finite feature");

    LinearClassifier clf;
    clf.W = Mat(X.cols, num_classes);
    clf.b = Mat(1, num_classes);

    const double reg = 0.5 / C;
    auto loss_at = [&](const Mat& W, const Mat& b) {
        Mat P;
        double l = ce_probs(X, W, b, y, P);
        for (double w : W.a) l += reg * w * w;
        return l;
    };

    double step = 1.0;
    double cur = loss_at(clf.W, clf.b);
    const int max_iters = 2000;
    for (int it = 0; it < max_iters; ++it) {
        Mat P;
        ce_probs(X, clf.W, clf.b, y, P);
        for (int i = 0; i < P.rows; ++i) P(i, y[i]) -= 1.0;
        Mat gW(X.cols, num_classes);
        num::add_matmul_at(X, P, gW);
        for (std::size_t i = 0; i < gW.size(); ++i) gW.a[i] += clf.W.a[i] / C;
        Mat gb(1, num_classes);
        for (int i = 0; i < P.rows; ++i)
            for (int c = 0; c < num_classes; ++c) gb(0, c) += P(i, c);

        double gnorm2 = 0.0;
        for (double v : gW.a) gnorm2 += v * v;
        for (double v : gb.a) gnorm2 += v * v;
        if (std::sqrt(gnorm2) < 1e-5) break;

        // Armijo backtracking from the last accepted step (allowed to grow).
        step = std::min(step * 2.0, 1e4);
        for (;;) {
            Mat Wn = clf.W, bn = clf.b;
            for (std::size_t i = 0; i < Wn.size(); ++i) Wn.a[i] -= step * gW.a[i];
            for (std::size_t i = 0; i < bn.size(); ++i) bn.a[i] -= step * gb.a[i];
            const double next = loss_at(Wn, bn);
            if (next <= cur - 0.25 * step * gnorm2 || step < 1e-12) {
                clf.W = std::move(Wn);
                clf.b = std::move(bn);
                cur = next;
                break;
            }
            step *= 0.5;
        }
    }
    clf.final_loss = cur;
    return clf;
}

// ---- MLP probe ----

std::vector<int> MlpClassifier::predict_all(const Mat& X) const {
    std::vector<int> out(X.rows);
    Mat H(X.rows, w1.cols);
    num::matmul_into(X, w1, H);
    for (int i = 0; i < H.rows; ++i)
        for (int j = 0; j < H.cols; ++j) H(i, j) = std::max(H(i, j) + b1(0, j), 0.0);
    Mat L(X.rows, w2.cols);
    num::matmul_into(H, w2, L);
    for (int i = 0; i < L.rows; ++i) {
        int best = 0;
        double bv = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < L.cols; ++c) {
            const double s = L(i, c) + b2(0, c);
            if (s > bv) {
                bv = s;
                best = c;
            }
        }
        out[i] = best;
    }
    return out;
}

MlpClassifier train_mlp_probe(const Mat& X_train, const std::vector<int>& y_train,
                              const Mat& X_val, const std::vector<int>& y_val, int num_classes,
                              const MlpConfig& cfg) {
    if (X_train.rows == 0 || X_val.rows == 0)
        throw InsufficientData("train_mlp_probe: empty train or validation subset");
    {
        std::vector<bool> seen(num_classes, false);
        int distinct = 0;
        for (int v : y_train)
            if (!seen[v]) {
                seen[v] = true;
                ++distinct;
            }
        if (distinct < 2) throw DegenerateLabels("train_mlp_probe: single-class input");
    }

    MlpClassifier clf;
    Rng rng(cfg.seed);
    clf.w1 = Mat(X_train.cols, cfg.hidden);
    clf.w1.fill_uniform(rng, -0.1, 0.1);
    clf.b1 = Mat(1, cfg.hidden);
    // Zero output weights with log-prior bias: the untrained probe predicts
    // the class-prior argmax.
    clf.w2 = Mat(cfg.hidden, num_classes);
    clf.b2 = Mat(1, num_classes);
    {
        std::vector<double> counts(num_classes, 0.0);
        for (int v : y_train) counts[v] += 1.0;
        for (int c = 0; c < num_classes; ++c)
            clf.b2(0, c) = counts[c] > 0 ? std::log(counts[c] / y_train.size()) : -40.0;
    }

    Mat g1(X_train.cols, cfg.hidden), gb1(1, cfg.hidden);
    Mat g2(cfg.hidden, num_classes), gb2(1, num_classes);

    double best_f1 = -1.0;
    int best_epoch = -1;
    Mat bw1 = clf.w1, bb1 = clf.b1, bw2 = clf.w2, bb2 = clf.b2;
    int bad = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::vector<int> order(X_train.rows);
        std::iota(order.begin(), order.end(), 0);
        Rng erng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(epoch) + 1));
        erng.shuffle(order);
        for (std::size_t off = 0; off < order.size();
             off += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<int> idx(
                order.begin() + off,
                order.begin() +
                    std::min(order.size(), off + static_cast<std::size_t>(cfg.batch_size)));
            Mat xb = rows_of(X_train, idx);
            std::vector<int> yb = subset(y_train, idx);
            g1.set_zero();
            gb1.set_zero();
            g2.set_zero();
            gb2.set_zero();
            Tape t;
            Var vx = t.constant(xb);
            Var h = t.relu_(t.add_rowvec(t.matmul(vx, t.leaf(clf.w1, &g1)),
                                         t.leaf(clf.b1, &gb1)));
            Var logits = t.add_rowvec(t.matmul(h, t.leaf(clf.w2, &g2)), t.leaf(clf.b2, &gb2));
            Var nll = t.scale(
                t.mean_all(t.take_per_row(t.log_softmax_rows(logits), yb)), -1.0);
            t.backward(nll);
            for (std::size_t i = 0; i < clf.w1.size(); ++i) clf.w1.a[i] -= cfg.lr * g1.a[i];
            for (std::size_t i = 0; i < clf.b1.size(); ++i) clf.b1.a[i] -= cfg.lr * gb1.a[i];
            for (std::size_t i = 0; i < clf.w2.size(); ++i) clf.w2.a[i] -= cfg.lr * g2.a[i];
            for (std::size_t i = 0; i < clf.b2.size(); ++i) clf.b2.a[i] -= cfg.lr * gb2.a[i];
        }
        const double f1 = macro_f1(clf.predict_all(X_val), y_val, num_classes);
        clf.val_history.push_back(f1);
        if (f1 > best_f1) {
            best_f1 = f1;
            best_epoch = epoch;
            bw1 = clf.w1;
            bb1 = clf.b1;
            bw2 = clf.w2;
            bb2 = clf.b2;
            bad = 0;
        } else if (++bad >= cfg.patience) {
            break;
        }
    }
    clf.w1 = bw1;
    clf.b1 = bb1;
    clf.w2 = bw2;
    clf.b2 = bb2;
    clf.best_epoch = best_epoch;
    return clf;
}

double macro_f1(const std::vector<int>& predictions, const std::vector<int>& golds,
                int num_classes) {
    if (predictions.size() != golds.size())
        throw ShapeError("macro_f1: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(golds.size()) + " golds");
    std::vector<std::int64_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < golds.size(); ++i) {
        if (predictions[i] == golds[i])
            ++tp[golds[i]];
        else {
            ++fp[predictions[i]];
            ++fn[golds[i]];
        }
    }
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        const std::int64_t denom = 2 * tp[c] + fp[c] + fn[c];
        sum += denom == 0 ? 0.0 : 2.0 * tp[c] / static_cast<double>(denom);
    }
    return sum / num_classes;
}

// ---- features ----

namespace {

// Batched posteriors in input order, grouping documents by length.
void posterior_all(const SeqVae& model, const std::vector<const Document*>& docs, Mat& mu,
                   Mat& logvar) {
    const int d = model.config().latent_dim;
    mu = Mat(static_cast<int>(docs.size()), d);
    logvar = Mat(static_cast<int>(docs.size()), d);
    std::map<int, std::vector<int>> by_len;
    for (std::size_t i = 0; i < docs.size(); ++i)
        by_len[docs[i]->raw_len()].push_back(static_cast<int>(i));
    for (const auto& [len, idx] : by_len) {
        const int batch = 64;
        for (std::size_t off = 0; off < idx.size(); off += batch) {
            std::vector<int> chunk_idx(
                idx.begin() + off,
                idx.begin() + std::min(idx.size(), off + static_cast<std::size_t>(batch)));
            std::vector<const Document*> chunk;
            for (int i : chunk_idx) chunk.push_back(docs[i]);
            Tape t;
            t.set_grad_enabled(false);
            models::LatentPosterior post = model.variational(t, model.encode_batch(t, chunk));
            const Mat& m = t.val(post.mu);
            const Mat& lv = t.val(post.logvar);
            for (std::size_t r = 0; r < chunk_idx.size(); ++r)
                for (int j = 0; j < d; ++j) {
                    mu(chunk_idx[r], j) = m(static_cast<int>(r), j);
                    logvar(chunk_idx[r], j) = lv(static_cast<int>(r), j);
                }
        }
    }
}

}  // namespace

ZFeatures z_features(const SeqVae& model, const std::vector<const Document*>& docs,
                     std::uint64_t z_seed) {
    Mat mu, logvar;
    posterior_all(model, docs, mu, logvar);
    ZFeatures out;
    out.X = Mat(mu.rows, mu.cols);
    out.labels.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        Rng rng(Rng::mix(z_seed, i));
        for (int j = 0; j < mu.cols; ++j) {
            const double sigma =
                std::max(std::exp(0.5 * logvar(static_cast<int>(i), j)), models::kSigmaFloor);
            out.X(static_cast<int>(i), j) = mu(static_cast<int>(i), j) + sigma * rng.normal();
        }
        out.labels.push_back(docs[i]->label);
    }
    return out;
}

MuFeatures mu_features(const SeqVae& model, const std::vector<const Document*>& docs) {
    Mat mu, logvar;
    posterior_all(model, docs, mu, logvar);
    MuFeatures out;
    out.X = std::move(mu);
    for (const auto* d : docs) out.labels.push_back(d->label);
    return out;
}

// ---- variance decomposition ----

VarianceReport variance_decomposition(const Mat& F) {
    const int g = F.rows, s = F.cols;
    if (g < 2 || s < 2)
        throw ConfigError("variance_decomposition: need g >= 2 and s >= 2, got " +
                          F.shape_str());
    VarianceReport rep;
    double grand = 0.0;
    for (double v : F.a) grand += v;
    grand /= static_cast<double>(g) * s;
    rep.mean = grand;

    // column means over subsamples i
    std::vector<double> col_mean(s, 0.0);
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < s; ++j) col_mean[j] += F(i, j);
    for (double& v : col_mean) v /= g;

    double t = 0.0;
    for (int j = 0; j < s; ++j) t += g * (col_mean[j] - grand) * (col_mean[j] - grand);
    rep.sigma_init = std::sqrt(t / (s - 1));

    double e = 0.0;
    for (int i = 0; i < g; ++i) {
        double inner = 0.0;
        for (int j = 0; j < s; ++j) inner += (F(i, j) - col_mean[j]) * (F(i, j) - col_mean[j]);
        e += inner / (s - 1);
    }
    rep.sigma_resid = std::sqrt(e / g);
    return rep;
}

// ---- protocol ----

std::string GridPoint::key() const {
    std::string l = std::to_string(lambda);
    l.erase(l.find_last_not_of('0') + 1);
    if (!l.empty() && l.back() == '.') l.pop_back();
    return "lambda=" + l + ",d=" + std::to_string(latent_dim);
}

namespace {

double cv_score(const Mat& X, const std::vector<int>& y, int num_classes, double C,
                const std::vector<Fold>& folds) {
    double sum = 0.0;
    for (const auto& fold : folds) {
        LinearClassifier clf =
            train_logreg(rows_of(X, fold.train_idx), subset(y, fold.train_idx), num_classes, C);
        sum += macro_f1(clf.predict_all(rows_of(X, fold.val_idx)), subset(y, fold.val_idx),
                        num_classes);
    }
    return sum / folds.size();
}

std::uint64_t cell_seed(std::uint64_t base, int i, int j, int p) {
    return Rng::mix(base, (static_cast<std::uint64_t>(i) << 32) ^
                              (static_cast<std::uint64_t>(j) << 16) ^
                              static_cast<std::uint64_t>(p));
}

}  // namespace

SslResult ssl_protocol(const EncoderGrid& grid, const LabeledCorpus& corpus, int n_per_class,
                       const SslConfig& cfg) {
    if (grid.points.empty() || grid.num_seeds < 1)
        throw ConfigError("ssl_protocol: empty encoder grid");
    const int s = grid.num_seeds;
    const int P = static_cast<int>(grid.points.size());
    const int C = corpus.num_classes;
    const bool full_data = n_per_class == 0;
    const int g = full_data ? 1 : cfg.g;

    auto test_docs = corpus.docs_of(Split::Test);
    if (test_docs.empty()) throw InsufficientData("ssl_protocol: empty test split");
    std::vector<int> test_labels;
    for (const auto* d : test_docs) test_labels.push_back(d->label);

    SslResult res;
    res.n_per_class = n_per_class;
    res.F = Mat(g, s);
    res.selected_C.assign(static_cast<std::size_t>(g) * s, 0.0);

    // Test-split features per (point, seed) are identical across subsamples.
    std::map<std::pair<int, int>, ZFeatures> test_cache;
    auto test_features = [&](int p, int j) -> const ZFeatures& {
        auto key = std::make_pair(p, j);
        auto it = test_cache.find(key);
        if (it == test_cache.end())
            it = test_cache
                     .emplace(key, z_features(grid.model(p, j), test_docs,
                                              Rng::mix(cfg.z_seed, 0x7e57000ULL + p * 131 + j)))
                     .first;
        return it->second;
    };

    for (int i = 0; i < g; ++i) {
        std::vector<const Document*> sub_docs;
        LabeledCorpus holder;
        if (full_data) {
            sub_docs = corpus.docs_of(Split::Train);
        } else {
            holder = corpus::subsample_balanced(corpus, n_per_class,
                                                Rng::mix(cfg.subsample_seed, i));
            for (const auto& d : holder.docs) sub_docs.push_back(&d);
        }
        std::vector<int> sub_labels;
        for (const auto* d : sub_docs) sub_labels.push_back(d->label);

        if (full_data) {
            // Full-data regime: MLP probe, early stopping on a stratified
            // 80/20 split, encoder hyperparameter by seed-averaged val F1.
            auto folds = stratified_kfold(sub_labels, 5, 1, Rng::mix(cfg.cv_seed, 1000 + i));
            const Fold& split = folds[0];  // val fold = 20%
            std::vector<double> avg(P, 0.0);
            std::vector<std::vector<double>> val_f1(P, std::vector<double>(s, 0.0));
            for (int p = 0; p < P; ++p) {
                for (int j = 0; j < s; ++j) {
                    ZFeatures zf = z_features(grid.model(p, j), sub_docs,
                                              cell_seed(cfg.z_seed, i, j, p));
                    MlpConfig mc = cfg.mlp;
                    mc.seed = cell_seed(0x313aULL, i, j, p);
                    MlpClassifier clf = train_mlp_probe(
                        rows_of(zf.X, split.train_idx), subset(zf.labels, split.train_idx),
                        rows_of(zf.X, split.val_idx), subset(zf.labels, split.val_idx), C, mc);
                    val_f1[p][j] =
                        macro_f1(clf.predict_all(rows_of(zf.X, split.val_idx)),
                                 subset(zf.labels, split.val_idx), C);
                    avg[p] += val_f1[p][j] / s;
                }
            }
            int pstar = 0;
            for (int p = 1; p < P; ++p)
                if (avg[p] > avg[pstar]) pstar = p;
            res.selected_model.push_back(grid.points[pstar].key());
            for (int j = 0; j < s; ++j) {
                ZFeatures zf = z_features(grid.model(pstar, j), sub_docs,
                                          cell_seed(cfg.z_seed, i, j, pstar));
                MlpConfig mc = cfg.mlp;
                mc.seed = cell_seed(0xF17ULL, i, j, pstar);
                MlpClassifier clf = train_mlp_probe(
                    rows_of(zf.X, split.train_idx), subset(zf.labels, split.train_idx),
                    rows_of(zf.X, split.val_idx), subset(zf.labels, split.val_idx), C, mc);
                const ZFeatures& tf = test_features(pstar, j);
                res.F(i, j) = macro_f1(clf.predict_all(tf.X), test_labels, C);
            }
            continue;
        }

        // Low-data regimes: logistic-regression probes with repeated
        // stratified CV; leave-one-out per class when k exceeds class counts.
        const int k_eff = std::min(cfg.kfolds, n_per_class);
        if (k_eff < 2)
            throw InsufficientData("ssl_protocol: regime too small for cross-validation");
        auto folds =
            stratified_kfold(sub_labels, k_eff, cfg.repeats, Rng::mix(cfg.cv_seed, i));

        // F-hat and C* per (j, p)
        std::vector<std::vector<double>> fhat(P, std::vector<double>(s, 0.0));
        std::vector<std::vector<double>> cstar(P, std::vector<double>(s, cfg.c_grid[0]));
        std::vector<std::vector<ZFeatures>> feats(P);
        for (int p = 0; p < P; ++p) {
            feats[p].resize(s);
            for (int j = 0; j < s; ++j) {
                feats[p][j] =
                    z_features(grid.model(p, j), sub_docs, cell_seed(cfg.z_seed, i, j, p));
                double best = -1.0;
                for (double c : cfg.c_grid) {
                    const double sc = cv_score(feats[p][j].X, feats[p][j].labels, C, c, folds);
                    if (sc > best) {
                        best = sc;
                        cstar[p][j] = c;
                    }
                }
                fhat[p][j] = best;
            }
        }
        int pstar = 0;
        double best_avg = -1.0;
        for (int p = 0; p < P; ++p) {
            double avg = 0.0;
            for (int j = 0; j < s; ++j) avg += fhat[p][j] / s;
            if (avg > best_avg) {
                best_avg = avg;
                pstar = p;
            }
        }
        res.selected_model.push_back(grid.points[pstar].key());
        for (int j = 0; j < s; ++j) {
            LinearClassifier clf = train_logreg(feats[pstar][j].X, feats[pstar][j].labels, C,
                                                cstar[pstar][j]);
            const ZFeatures& tf = test_features(pstar, j);
            res.F(i, j) = macro_f1(clf.predict_all(tf.X), test_labels, C);
            res.selected_C[static_cast<std::size_t>(i) * s + j] = cstar[pstar][j];
        }
    }

    if (g >= 2 && s >= 2) res.variance = variance_decomposition(res.F);
    else {
        double m = 0.0;
        for (double v : res.F.a) m += v;
        res.variance.mean = m / res.F.size();
        if (s >= 2 && g == 1) {
            // single-subsample row: only the init spread is defined
            double var = 0.0;
            for (double v : res.F.a) var += (v - res.variance.mean) * (v - res.variance.mean);
            res.variance.sigma_init = std::sqrt(var / (s - 1));
        }
    }
    return res;
}

MuVsZReport mu_vs_z_probe(const SeqVae& model, const LabeledCorpus& corpus, int n_per_class,
                          const SslConfig& cfg) {
    LabeledCorpus sub = corpus::subsample_balanced(corpus, n_per_class, cfg.subsample_seed);
    std::vector<const Document*> docs;
    for (const auto& d : sub.docs) docs.push_back(&d);
    auto test_docs = corpus.docs_of(Split::Test);
    std::vector<int> test_labels;
    for (const auto* d : test_docs) test_labels.push_back(d->label);
    const int C = corpus.num_classes;

    const int k_eff = std::min(cfg.kfolds, n_per_class);
    std::vector<int> labels;
    for (const auto* d : docs) labels.push_back(d->label);
    auto folds = stratified_kfold(labels, k_eff, cfg.repeats, cfg.cv_seed);

    auto run = [&](const Mat& X, const std::vector<int>& y, const Mat& Xtest) {
        double best = -1.0, chosen = cfg.c_grid[0];
        for (double c : cfg.c_grid) {
            const double sc = cv_score(X, y, C, c, folds);
            if (sc > best) {
                best = sc;
                chosen = c;
            }
        }
        LinearClassifier clf = train_logreg(X, y, C, chosen);
        return macro_f1(clf.predict_all(Xtest), test_labels, C);
    };

    MuVsZReport rep;
    ZFeatures zf = z_features(model, docs, cfg.z_seed);
    ZFeatures ztest = z_features(model, test_docs, Rng::mix(cfg.z_seed, 0x7e57ULL));
    rep.f1_z = run(zf.X, zf.labels, ztest.X);
    MuFeatures mf = mu_features(model, docs);
    MuFeatures mtest = mu_features(model, test_docs);
    rep.f1_mu = run(mf.X, mf.labels, mtest.X);
    return rep;
}

double permutation_chance_f1(const std::vector<int>& golds, int num_classes, std::uint64_t seed,
                             int trials) {
    double sum = 0.0;
    for (int t = 0; t < trials; ++t) {
        std::vector<int> perm = golds;
        Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(t)));
        rng.shuffle(perm);
        sum += macro_f1(perm, golds, num_classes);
    }
    return sum / trials;
}

// ---- reference classifiers / agreement ----

int BowClassifier::predict(const std::vector<int>& token_ids) const {
    const int w = first_k == 0 ? static_cast<int>(token_ids.size())
                               : std::min<int>(first_k, static_cast<int>(token_ids.size()));
    Mat mean(1, embed.cols);
    for (int i = 0; i < w; ++i)
        for (int j = 0; j < embed.cols; ++j) mean(0, j) += embed(token_ids[i], j);
    if (w > 0)
        for (double& v : mean.a) v /= w;
    int best = 0;
    double bv = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < W.cols; ++c) {
        double s = b(0, c);
        for (int j = 0; j < embed.cols; ++j) s += mean(0, j) * W(j, c);
        if (s > bv) {
            bv = s;
            best = c;
        }
    }
    return best;
}

BowClassifier bow_reference_classifier(const LabeledCorpus& corpus, int first_k, int embed_dim,
                                       std::uint64_t seed) {
    auto train_docs = corpus.docs_of(Split::Train);
    auto valid_docs = corpus.docs_of(Split::Valid);
    auto test_docs = corpus.docs_of(Split::Test);
    if (train_docs.empty() || valid_docs.empty() || test_docs.empty())
        throw InsufficientData("bow_reference_classifier: needs all three splits");
    const int V = corpus.vocab.size();
    const int C = corpus.num_classes;

    BowClassifier clf;
    clf.first_k = first_k;
    Rng rng(seed);
    clf.embed = Mat(V, embed_dim);
    clf.embed.fill_uniform(rng, -0.1, 0.1);
    clf.W = Mat(embed_dim, C);
    clf.W.fill_uniform(rng, -0.1, 0.1);
    clf.b = Mat(1, C);

    Mat ge(V, embed_dim), gW(embed_dim, C), gb(1, C);
    auto eval_f1 = [&](const std::vector<const Document*>& docs) {
        std::vector<int> preds, golds;
        for (const auto* d : docs) {
            preds.push_back(clf.predict(d->token_ids));
            golds.push_back(d->label);
        }
        return macro_f1(preds, golds, C);
    };

    double best_f1 = -1.0;
    Mat be, bW, bb;
    int bad = 0;
    const double lr = 0.5, clip = 5.0;
    // warmup is noisy on mean-embedding features, so the plateau window is wide
    const int max_epochs = 40, patience = 6;
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        Rng erng(Rng::mix(seed, static_cast<std::uint64_t>(epoch) + 17));
        auto batches = objectives::make_batches(train_docs, 64, erng);
        for (const auto& batch : batches) {
            const int L = batch[0]->raw_len();
            const int w = first_k == 0 ? L : std::min(first_k, L);
            ge.set_zero();
            gW.set_zero();
            gb.set_zero();
            Tape t;
            Var etab = t.leaf(clf.embed, &ge);
            Var mean;
            for (int p = 0; p < w; ++p) {
                std::vector<int> ids(batch.size());
                for (std::size_t i = 0; i < batch.size(); ++i) ids[i] = batch[i]->token_ids[p];
                Var e = t.gather_rows(etab, ids);
                mean = p == 0 ? e : t.add(mean, e);
            }
            mean = t.scale(mean, 1.0 / w);
            Var logits =
                t.add_rowvec(t.matmul(mean, t.leaf(clf.W, &gW)), t.leaf(clf.b, &gb));
            std::vector<int> yb(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) yb[i] = batch[i]->label;
            Var nll =
                t.scale(t.mean_all(t.take_per_row(t.log_softmax_rows(logits), yb)), -1.0);
            t.backward(nll);
            double n2 = 0.0;
            for (double v : ge.a) n2 += v * v;
            for (double v : gW.a) n2 += v * v;
            for (double v : gb.a) n2 += v * v;
            const double norm = std::sqrt(n2);
            const double sc = norm > clip ? clip / norm : 1.0;
            for (std::size_t i = 0; i < clf.embed.size(); ++i)
                clf.embed.a[i] -= lr * sc * ge.a[i];
            for (std::size_t i = 0; i < clf.W.size(); ++i) clf.W.a[i] -= lr * sc * gW.a[i];
            for (std::size_t i = 0; i < clf.b.size(); ++i) clf.b.a[i] -= lr * sc * gb.a[i];
        }
        const double f1 = eval_f1(valid_docs);
        if (f1 > best_f1) {
            best_f1 = f1;
            be = clf.embed;
            bW = clf.W;
            bb = clf.b;
            bad = 0;
        } else if (++bad >= patience) {
            break;
        }
    }
    clf.embed = be;
    clf.W = bW;
    clf.b = bb;
    clf.test_f1 = eval_f1(test_docs);
    return clf;
}

double agreement(const SeqVae& model, const LabeledCorpus& corpus, const BowClassifier& clf,
                 decode::Strategy strategy, int beam_size, int max_len, std::uint64_t z_seed) {
    auto test_docs = corpus.docs_of(Split::Test);
    if (test_docs.empty()) throw InsufficientData("agreement: empty test split");
    std::vector<int> preds, golds;
    std::uint64_t idx = 0;
    for (const auto* d : test_docs) {
        decode::BeamHypothesis hyp =
            decode::reconstruct(model, *d, strategy, beam_size, max_len, Rng::mix(z_seed, idx++));
        preds.push_back(clf.predict(hyp.tokens));
        golds.push_back(d->label);
    }
    return macro_f1(preds, golds, corpus.num_classes);
}

}  // namespace vaelab::ssl
