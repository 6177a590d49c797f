#include "vaelab/model.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace vaelab::models {

using json = nlohmann::json;

const char* encoder_name(EncoderKind k) {
    switch (k) {
        case EncoderKind::LstmLast: return "lstm_last";
        case EncoderKind::LstmMax: return "lstm_max";
        case EncoderKind::LstmAvg: return "lstm_avg";
        case EncoderKind::BowMax: return "bow_max";
    }
    return "?";
}

const char* decoder_name(DecoderKind k) {
    switch (k) {
        case DecoderKind::LstmConditional: return "lstm_cond";
        case DecoderKind::Unigram: return "unigram";
        case DecoderKind::LstmUnconditional: return "lstm_lm";
    }
    return "?";
}

EncoderKind parse_encoder(const std::string& s) {
    if (s == "lstm_last") return EncoderKind::LstmLast;
    if (s == "lstm_max") return EncoderKind::LstmMax;
    if (s == "lstm_avg") return EncoderKind::LstmAvg;
    if (s == "bow_max") return EncoderKind::BowMax;
    throw ConfigError("unknown encoder kind: " + s);
}

DecoderKind parse_decoder(const std::string& s) {
    if (s == "lstm_cond") return DecoderKind::LstmConditional;
    if (s == "unigram") return DecoderKind::Unigram;
    if (s == "lstm_lm") return DecoderKind::LstmUnconditional;
    throw ConfigError("unknown decoder kind: " + s);
}

void ModelConfig::validate() const {
    if (vocab_size < corpus::kNumReserved + 1) throw ConfigError("model: vocab_size too small");
    if (embed_dim < 1 || hidden_dim < 1 || uni_hidden < 1)
        throw ConfigError("model: dimensions must be positive");
    if (!is_lm() && latent_dim < 1) throw ConfigError("model: latent_dim must be positive");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("model: dropout_p in [0,1)");
}

Param& ParamSet::add(const std::string& name, int rows, int cols) {
    if (find(name)) throw ConfigError("duplicate parameter: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->w = Mat(rows, cols);
    p->g = Mat(rows, cols);
    params_.push_back(std::move(p));
    return *params_.back();
}

Param* ParamSet::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

const Param* ParamSet::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

std::vector<Param*> ParamSet::all() {
    std::vector<Param*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Param*> ParamSet::all() const {
    std::vector<const Param*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

void ParamSet::zero_grads() {
    for (auto& p : params_) p->g.set_zero();
}

double ParamSet::grad_norm() const {
    double s = 0;
    for (const auto& p : params_)
        if (p->trainable)
            for (double v : p->g.a) s += v * v;
    return std::sqrt(s);
}

void ParamSet::scale_grads(double s) {
    for (auto& p : params_)
        for (double& v : p->g.a) v *= s;
}

void ParamSet::sgd_step(double lr) {
    for (auto& p : params_) {
        if (!p->trainable) continue;
        for (std::size_t i = 0; i < p->w.size(); ++i) p->w.a[i] -= lr * p->g.a[i];
    }
}

void ParamSet::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& p : params_)
        if (p->name.rfind(prefix, 0) == 0) p->trainable = trainable;
}

std::uint64_t ParamSet::value_checksum(const std::string& prefix) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params_) {
        if (p->name.rfind(prefix, 0) != 0) continue;
        for (double v : p->w.a) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xff;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

LstmState lstm_step(Tape& t, Var x, LstmState s, Var w, Var b) {
    const int hidden = t.val(s.h).cols;
    Var gates = t.add_rowvec(t.matmul(t.concat_cols(x, s.h), w), b);
    if (t.val(gates).cols != 4 * hidden)
        throw ShapeError("lstm_step: gates " + t.val(gates).shape_str() + " vs hidden " +
                         std::to_string(hidden));
    Var i = t.sigmoid_(t.slice_cols(gates, 0, hidden));
    Var f = t.sigmoid_(t.slice_cols(gates, hidden, 2 * hidden));
    Var g = t.tanh_(t.slice_cols(gates, 2 * hidden, 3 * hidden));
    Var o = t.sigmoid_(t.slice_cols(gates, 3 * hidden, 4 * hidden));
    Var c = t.add(t.mul(f, s.c), t.mul(i, g));
    Var h = t.mul(o, t.tanh_(c));
    return {h, c};
}

SeqVae::SeqVae(ModelConfig cfg, std::uint64_t init_seed)
    : cfg_(std::move(cfg)), init_seed_(init_seed) {
    cfg_.validate();
    const int V = cfg_.vocab_size;
    const int E = cfg_.embed_dim;
    const int H = cfg_.hidden_dim;
    const int d = cfg_.latent_dim;

    if (!cfg_.is_lm()) {
        params_.add("enc.embed", V, E);
        if (cfg_.encoder != EncoderKind::BowMax) {
            params_.add("enc.lstm.w", E + H, 4 * H);
            params_.add("enc.lstm.b", 1, 4 * H);
        }
        const int R = cfg_.encoder_out_dim();
        params_.add("lat.mu.w", R, d);
        params_.add("lat.mu.b", 1, d);
        params_.add("lat.lv.w", R, d);
        params_.add("lat.lv.b", 1, d);
    }
    switch (cfg_.decoder) {
        case DecoderKind::LstmConditional:
            params_.add("dec.embed", V, E);
            params_.add("dec.lstm.w", E + d + H, 4 * H);
            params_.add("dec.lstm.b", 1, 4 * H);
            params_.add("dec.out.w", H, V);
            params_.add("dec.out.b", 1, V);
            break;
        case DecoderKind::LstmUnconditional:
            params_.add("dec.embed", V, E);
            params_.add("dec.lstm.w", E + H, 4 * H);
            params_.add("dec.lstm.b", 1, 4 * H);
            params_.add("dec.out.w", H, V);
            params_.add("dec.out.b", 1, V);
            break;
        case DecoderKind::Unigram:
            params_.add("uni.w1", d, cfg_.uni_hidden);
            params_.add("uni.b1", 1, cfg_.uni_hidden);
            params_.add("uni.w2", cfg_.uni_hidden, V);
            params_.add("uni.b2", 1, V);
            break;
    }
    Rng rng(init_seed);
    for (Param* p : params_.all()) init_param(*p, rng, p->name.find(".b") != std::string::npos);
    boost_latent_channel();
}

// The latent pathway starts an order of magnitude below the token pathway
// under a flat +/-0.1 init; SGD then closes the channel before the decoder
// learns to read it. Widening the z-consuming input blocks (and the mu head)
// keeps the channel live from the first step.
void SeqVae::boost_latent_channel(bool decoder_only) {
    const int E = cfg_.embed_dim;
    const int d = cfg_.latent_dim;
    if (Param* w = params_.find("dec.lstm.w");
        w && cfg_.decoder == DecoderKind::LstmConditional) {
        for (int r = E; r < E + d; ++r)
            for (int col = 0; col < w->w.cols; ++col) w->w(r, col) *= 10.0;
    }
    if (Param* w = params_.find("uni.w1")) {
        for (auto& v : w->w.a) v *= 10.0;
    }
    if (decoder_only) return;
    if (Param* w = params_.find("lat.mu.w")) {
        for (auto& v : w->w.a) v *= 5.0;
    }
}

void SeqVae::init_param(Param& p, Rng& rng, bool is_bias) {
    if (is_bias) {
        p.w.set_zero();
        // Forget-gate bias starts at 1 so fresh LSTMs can carry early tokens
        // across the sequence.
        if (p.name.find("lstm.b") != std::string::npos) {
            const int H = p.w.cols / 4;
            for (int j = H; j < 2 * H; ++j) p.w(0, j) = 1.0;
        }
    } else {
        p.w.fill_uniform(rng, -0.1, 0.1);
    }
}

Var SeqVae::pvar(Tape& t, const Param& p) const {
    return t.leaf(p.w, p.trainable && t.grad_enabled() ? const_cast<Mat*>(&p.g) : nullptr);
}

namespace {

std::vector<int> ids_at(const std::vector<const corpus::Document*>& docs, int pos) {
    std::vector<int> ids(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) ids[i] = docs[i]->token_ids[pos];
    return ids;
}

int batch_len(const std::vector<const corpus::Document*>& docs) {
    if (docs.empty()) throw EmptyDocument("empty batch");
    const int len = docs[0]->raw_len();
    if (len < 1) throw EmptyDocument("document with no tokens");
    for (const auto* d : docs)
        if (d->raw_len() != len)
            throw ShapeError("batch documents must share length: " + std::to_string(len) +
                             " vs " + std::to_string(d->raw_len()));
    return len;
}

}  // namespace

Var SeqVae::encode_batch(Tape& t, const std::vector<const corpus::Document*>& docs) const {
    if (cfg_.is_lm()) throw ContractError("encode_batch: model has no encoder");
    const int L = batch_len(docs);
    const int B = static_cast<int>(docs.size());
    Var etab = pvar(t, *params_.find("enc.embed"));

    if (cfg_.encoder == EncoderKind::BowMax) {
        Var r = t.gather_rows(etab, ids_at(docs, 0));
        for (int i = 1; i < L; ++i) r = t.maximum(r, t.gather_rows(etab, ids_at(docs, i)));
        return r;
    }

    Var w = pvar(t, *params_.find("enc.lstm.w"));
    Var b = pvar(t, *params_.find("enc.lstm.b"));
    LstmState s{t.constant(Mat(B, cfg_.hidden_dim)), t.constant(Mat(B, cfg_.hidden_dim))};
    Var pooled;
    for (int i = 0; i < L; ++i) {
        Var x = t.gather_rows(etab, ids_at(docs, i));
        s = lstm_step(t, x, s, w, b);
        if (cfg_.encoder == EncoderKind::LstmMax)
            pooled = i == 0 ? s.h : t.maximum(pooled, s.h);
        else if (cfg_.encoder == EncoderKind::LstmAvg)
            pooled = i == 0 ? s.h : t.add(pooled, s.h);
    }
    switch (cfg_.encoder) {
        case EncoderKind::LstmLast: return s.h;
        case EncoderKind::LstmMax: return pooled;
        case EncoderKind::LstmAvg: return t.scale(pooled, 1.0 / L);
        default: break;
    }
    throw ContractError("unreachable encoder kind");
}

LatentPosterior SeqVae::variational(Tape& t, Var r) const {
    Var mu = t.add_rowvec(t.matmul(r, pvar(t, *params_.find("lat.mu.w"))),
                          pvar(t, *params_.find("lat.mu.b")));
    Var lv = t.add_rowvec(t.matmul(r, pvar(t, *params_.find("lat.lv.w"))),
                          pvar(t, *params_.find("lat.lv.b")));
    return {mu, lv};
}

Var SeqVae::sample_latent(Tape& t, const LatentPosterior& post, Rng& rng) const {
    const Mat& mu = t.val(post.mu);
    Mat eps(mu.rows, mu.cols);
    eps.fill_normal(rng);
    Var sigma = t.max_const(t.exp_(t.scale(post.logvar, 0.5)), kSigmaFloor);
    return t.add(post.mu, t.mul(sigma, t.constant(std::move(eps))));
}

DecodeLoss SeqVae::decoder_nll(Tape& t, Var z, const std::vector<const corpus::Document*>& docs,
                               bool train_mode, Rng* dropout_rng) const {
    const int L = batch_len(docs);
    const bool drop = train_mode && dropout_rng && cfg_.dropout_p > 0.0;
    DecodeLoss out;

    if (cfg_.decoder == DecoderKind::Unigram) {
        if (!z.valid()) throw ContractError("unigram decoder requires a latent sample");
        Var hid = t.relu_(t.add_rowvec(t.matmul(z, pvar(t, *params_.find("uni.w1"))),
                                       pvar(t, *params_.find("uni.b1"))));
        if (drop) hid = t.dropout(hid, cfg_.dropout_p, true, *dropout_rng);
        Var logits = t.add_rowvec(t.matmul(hid, pvar(t, *params_.find("uni.w2"))),
                                  pvar(t, *params_.find("uni.b2")));
        Var logp = t.log_softmax_rows(logits);
        // Single shared distribution: the document loss sums over the L words
        // with no EOS term, so token order cannot matter.
        for (int i = 0; i < L; ++i) {
            Var nll = t.scale(t.take_per_row(logp, ids_at(docs, i)), -1.0);
            out.per_pos.push_back(nll);
            out.per_doc_nll = i == 0 ? nll : t.add(out.per_doc_nll, nll);
        }
        out.positions = L;
        return out;
    }

    const bool conditional = cfg_.decoder == DecoderKind::LstmConditional;
    if (conditional && !z.valid())
        throw ContractError("conditional decoder requires a latent sample");
    const int B = static_cast<int>(docs.size());
    Var etab = pvar(t, *params_.find("dec.embed"));
    Var w = pvar(t, *params_.find("dec.lstm.w"));
    Var b = pvar(t, *params_.find("dec.lstm.b"));
    Var ow = pvar(t, *params_.find("dec.out.w"));
    Var ob = pvar(t, *params_.find("dec.out.b"));
    LstmState s{t.constant(Mat(B, cfg_.hidden_dim)), t.constant(Mat(B, cfg_.hidden_dim))};

    // Teacher forcing over L+1 steps: inputs BOS,x_1..x_L, targets x_1..x_L,EOS.
    for (int i = 0; i <= L; ++i) {
        std::vector<int> prev =
            i == 0 ? std::vector<int>(docs.size(), corpus::kBos) : ids_at(docs, i - 1);
        std::vector<int> target =
            i == L ? std::vector<int>(docs.size(), corpus::kEos) : ids_at(docs, i);
        Var x = t.gather_rows(etab, std::move(prev));
        if (drop) x = t.dropout(x, cfg_.dropout_p, true, *dropout_rng);
        if (conditional) x = t.concat_cols(x, z);
        s = lstm_step(t, x, s, w, b);
        Var h = s.h;
        if (drop) h = t.dropout(h, cfg_.dropout_p, true, *dropout_rng);
        Var logp = t.log_softmax_rows(t.add_rowvec(t.matmul(h, ow), ob));
        Var nll = t.scale(t.take_per_row(logp, std::move(target)), -1.0);
        out.per_pos.push_back(nll);
        out.per_doc_nll = i == 0 ? nll : t.add(out.per_doc_nll, nll);
    }
    out.positions = L + 1;
    return out;
}

void SeqVae::posterior_of(const corpus::Document& doc, Mat& mu, Mat& logvar) const {
    if (cfg_.is_lm()) throw ContractError("posterior_of: model has no encoder");
    Tape t;
    t.set_grad_enabled(false);
    std::vector<const corpus::Document*> one{&doc};
    LatentPosterior post = variational(t, encode_batch(t, one));
    mu = t.val(post.mu);
    logvar = t.val(post.logvar);
}

std::vector<Mat> SeqVae::encoder_sequence(
    const std::vector<const corpus::Document*>& docs) const {
    if (cfg_.is_lm()) throw ContractError("encoder_sequence: model has no encoder");
    const int L = batch_len(docs);
    const int B = static_cast<int>(docs.size());
    Tape t;
    t.set_grad_enabled(false);
    Var etab = t.leaf(params_.find("enc.embed")->w, nullptr);
    std::vector<Mat> out;
    out.reserve(L);
    if (cfg_.encoder == EncoderKind::BowMax) {
        for (int i = 0; i < L; ++i) out.push_back(t.val(t.gather_rows(etab, ids_at(docs, i))));
        return out;
    }
    Var w = t.leaf(params_.find("enc.lstm.w")->w, nullptr);
    Var b = t.leaf(params_.find("enc.lstm.b")->w, nullptr);
    LstmState s{t.constant(Mat(B, cfg_.hidden_dim)), t.constant(Mat(B, cfg_.hidden_dim))};
    for (int i = 0; i < L; ++i) {
        s = lstm_step(t, t.gather_rows(etab, ids_at(docs, i)), s, w, b);
        out.push_back(t.val(s.h));
    }
    return out;
}

std::vector<std::string> SeqVae::decoder_param_names() const {
    std::vector<std::string> out;
    for (const Param* p : params_.all())
        if (p->name.rfind("dec.", 0) == 0 || p->name.rfind("uni.", 0) == 0)
            out.push_back(p->name);
    return out;
}

std::vector<std::string> SeqVae::encoder_param_names() const {
    std::vector<std::string> out;
    for (const Param* p : params_.all())
        if (p->name.rfind("enc.", 0) == 0 || p->name.rfind("lat.", 0) == 0)
            out.push_back(p->name);
    return out;
}

void SeqVae::reinit_decoder(std::uint64_t init_seed) {
    Rng rng(Rng::mix(init_seed, 0xDECDULL));
    for (const auto& name : decoder_param_names()) {
        Param* p = params_.find(name);
        init_param(*p, rng, name.find(".b") != std::string::npos);
    }
    boost_latent_channel(/*decoder_only=*/true);
}

// ---- checkpoint io ----

namespace {
constexpr char kMagic[8] = {'V', 'L', 'C', 'K', 'P', 'T', '0', '1'};
}

void save_checkpoint(const std::string& path, const SeqVae& model, const CheckpointMeta& meta) {
    const ModelConfig& c = model.config();
    json j;
    j["arch"] = {{"encoder", encoder_name(c.encoder)},
                 {"decoder", decoder_name(c.decoder)},
                 {"vocab_size", c.vocab_size},
                 {"embed_dim", c.embed_dim},
                 {"hidden_dim", c.hidden_dim},
                 {"latent_dim", c.latent_dim},
                 {"uni_hidden", c.uni_hidden},
                 {"dropout_p", c.dropout_p},
                 {"vocab_hash", c.vocab_hash}};
    j["meta"] = {{"lambda", meta.lambda},
                 {"flavor", meta.flavor},
                 {"anneal_epochs", meta.anneal_epochs},
                 {"seed_init", meta.seed_init},
                 {"seed_data", meta.seed_data},
                 {"seed_sample", meta.seed_sample},
                 {"epoch", meta.epoch},
                 {"phase", meta.phase}};
    j["params"] = json::array();
    for (const Param* p : model.params().all())
        j["params"].push_back({{"name", p->name}, {"rows", p->w.rows}, {"cols", p->w.cols}});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    const std::string header = j.dump();
    const std::uint32_t hlen = static_cast<std::uint32_t>(header.size());
    f.write(kMagic, sizeof kMagic);
    f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const Param* p : model.params().all())
        f.write(reinterpret_cast<const char*>(p->w.a.data()),
                static_cast<std::streamsize>(p->w.size() * sizeof(double)));
    if (!f) throw IoError("short write on checkpoint: " + path);
}

SeqVae load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint: " + path);
    char magic[8];
    f.read(magic, sizeof magic);
    if (!f || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw IoError("bad checkpoint magic in " + path);
    std::uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    std::string header(hlen, '\0');
    f.read(header.data(), hlen);
    if (!f) throw IoError("truncated checkpoint header in " + path);
    json j = json::parse(header);

    ModelConfig c;
    c.encoder = parse_encoder(j["arch"]["encoder"].get<std::string>());
    c.decoder = parse_decoder(j["arch"]["decoder"].get<std::string>());
    c.vocab_size = j["arch"]["vocab_size"].get<int>();
    c.embed_dim = j["arch"]["embed_dim"].get<int>();
    c.hidden_dim = j["arch"]["hidden_dim"].get<int>();
    c.latent_dim = j["arch"]["latent_dim"].get<int>();
    c.uni_hidden = j["arch"]["uni_hidden"].get<int>();
    c.dropout_p = j["arch"]["dropout_p"].get<double>();
    c.vocab_hash = j["arch"]["vocab_hash"].get<std::uint64_t>();

    SeqVae model(c, j["meta"]["seed_init"].get<std::uint64_t>());
    const auto& plist = j["params"];
    auto params = model.params().all();
    if (plist.size() != params.size())
        throw IoError("checkpoint parameter count mismatch in " + path);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (plist[i]["name"].get<std::string>() != params[i]->name ||
            plist[i]["rows"].get<int>() != params[i]->w.rows ||
            plist[i]["cols"].get<int>() != params[i]->w.cols)
            throw IoError("checkpoint descriptor mismatch at " + params[i]->name);
        f.read(reinterpret_cast<char*>(params[i]->w.a.data()),
               static_cast<std::streamsize>(params[i]->w.size() * sizeof(double)));
    }
    if (!f) throw IoError("truncated checkpoint data in " + path);
    if (meta_out) {
        meta_out->lambda = j["meta"]["lambda"].get<double>();
        meta_out->flavor = j["meta"]["flavor"].get<std::string>();
        meta_out->anneal_epochs = j["meta"]["anneal_epochs"].get<int>();
        meta_out->seed_init = j["meta"]["seed_init"].get<std::uint64_t>();
        meta_out->seed_data = j["meta"]["seed_data"].get<std::uint64_t>();
        meta_out->seed_sample = j["meta"]["seed_sample"].get<std::uint64_t>();
        meta_out->epoch = j["meta"]["epoch"].get<int>();
        meta_out->phase = j["meta"]["phase"].get<std::string>();
    }
    return model;
}

}  // namespace vaelab::models
