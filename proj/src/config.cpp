#include "vaelab/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace vaelab::cli {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    return out;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::map<std::string, std::string> parse_flat_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        if (kv.count(key))
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        kv[key] = val;
    }
    return kv;
}

namespace {

class ConfigReader {
  public:
    explicit ConfigReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    bool has(const std::string& k) {
        used_.insert(k);
        return kv_.count(k) > 0;
    }
    std::string str(const std::string& k, const std::string& dflt) {
        used_.insert(k);
        auto it = kv_.find(k);
        return it == kv_.end() ? dflt : it->second;
    }
    int integer(const std::string& k, int dflt) {
        used_.insert(k);
        auto it = kv_.find(k);
        if (it == kv_.end()) return dflt;
        try {
            std::size_t pos = 0;
            const int v = std::stoi(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("config key '" + k + "': expected integer, got '" + it->second + "'");
        }
    }
    double real(const std::string& k, double dflt) {
        used_.insert(k);
        auto it = kv_.find(k);
        if (it == kv_.end()) return dflt;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("config key '" + k + "': expected number, got '" + it->second + "'");
        }
    }
    bool boolean(const std::string& k, bool dflt) {
        used_.insert(k);
        auto it = kv_.find(k);
        if (it == kv_.end()) return dflt;
        if (it->second == "true") return true;
        if (it->second == "false") return false;
        throw ConfigError("config key '" + k + "': expected true/false, got '" + it->second + "'");
    }
    std::uint64_t u64(const std::string& k, std::uint64_t dflt) {
        used_.insert(k);
        auto it = kv_.find(k);
        if (it == kv_.end()) return dflt;
        try {
            return std::stoull(it->second);
        } catch (...) {
            throw ConfigError("config key '" + k + "': expected seed, got '" + it->second + "'");
        }
    }
    template <typename T, typename F>
    std::vector<T> list(const std::string& k, std::vector<T> dflt, F parse_one) {
        used_.insert(k);
        auto it = kv_.find(k);
        if (it == kv_.end()) return dflt;
        std::vector<T> out;
        for (const auto& item : split_list(it->second)) {
            if (item.empty()) throw ConfigError("config key '" + k + "': empty list element");
            out.push_back(parse_one(item));
        }
        if (out.empty()) throw ConfigError("config key '" + k + "': empty list");
        return out;
    }

    void reject_unknown() const {
        for (const auto& [k, v] : kv_)
            if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }

  private:
    std::map<std::string, std::string> kv_;
    std::set<std::string> used_;
};

}  // namespace

ExperimentConfig config_from_text(const std::string& text) {
    ConfigReader r(parse_flat_config(text));
    ExperimentConfig c;

    c.corpus_source = r.str("corpus.source", c.corpus_source);
    c.synth.num_classes = r.integer("corpus.synth.num_classes", c.synth.num_classes);
    c.synth.vocab_size = r.integer("corpus.synth.vocab_size", c.synth.vocab_size);
    c.synth.doc_len_min = r.integer("corpus.synth.doc_len_min", c.synth.doc_len_min);
    c.synth.doc_len_max = r.integer("corpus.synth.doc_len_max", c.synth.doc_len_max);
    if (r.has("corpus.synth.marker_position")) {
        const std::string mp = r.str("corpus.synth.marker_position", "uniform");
        if (mp == "uniform")
            c.synth.marker_position.reset();
        else
            try {
                c.synth.marker_position = std::stoi(mp);
            } catch (...) {
                throw ConfigError("corpus.synth.marker_position: integer or 'uniform'");
            }
    }
    c.synth.marker_strength = r.real("corpus.synth.marker_strength", c.synth.marker_strength);
    c.synth.docs_train = r.integer("corpus.synth.docs_train", c.synth.docs_train);
    c.synth.docs_valid = r.integer("corpus.synth.docs_valid", c.synth.docs_valid);
    c.synth.docs_test = r.integer("corpus.synth.docs_test", c.synth.docs_test);
    c.synth_seed = r.u64("corpus.synth.seed", c.synth_seed);
    c.tsv_train = r.str("corpus.tsv.train", "");
    c.tsv_valid = r.str("corpus.tsv.valid", "");
    c.tsv_test = r.str("corpus.tsv.test", "");
    c.load.lowercase = r.boolean("corpus.lowercase", c.load.lowercase);
    c.load.max_vocab = r.integer("corpus.max_vocab", c.load.max_vocab);
    c.load.min_freq = r.integer("corpus.min_freq", c.load.min_freq);
    c.load.truncate_len = r.integer("corpus.truncate_len", c.load.truncate_len);

    c.encoder = models::parse_encoder(r.str("model.encoder", models::encoder_name(c.encoder)));
    c.decoder = models::parse_decoder(r.str("model.decoder", models::decoder_name(c.decoder)));
    c.pretrain =
        objectives::parse_pretrain(r.str("model.pretrain", objectives::pretrain_name(c.pretrain)));
    c.embed_dim = r.integer("model.embed_dim", c.embed_dim);
    c.hidden_dim = r.integer("model.hidden_dim", c.hidden_dim);
    c.uni_hidden = r.integer("model.uni_hidden", c.uni_hidden);
    c.dropout_p = r.real("model.dropout_p", c.dropout_p);
    c.lambda_list = r.list<double>("model.lambda_list", c.lambda_list,
                                   [](const std::string& s) { return std::stod(s); });
    c.d_list =
        r.list<int>("model.d_list", c.d_list, [](const std::string& s) { return std::stoi(s); });

    c.lr = r.real("train.lr", c.lr);
    c.clip_norm = r.real("train.clip_norm", c.clip_norm);
    c.batch_size = r.integer("train.batch_size", c.batch_size);
    c.patience = r.integer("train.patience", c.patience);
    c.max_halvings = r.integer("train.max_halvings", c.max_halvings);
    c.max_epochs = r.integer("train.max_epochs", c.max_epochs);
    c.flavor = objectives::parse_flavor(r.str("train.flavor", objectives::flavor_name(c.flavor)));
    c.anneal_epochs = r.integer("train.anneal_epochs", c.anneal_epochs);
    c.train_lm_baseline = r.boolean("train.lm_baseline", c.train_lm_baseline);
    auto parse_seed = [](const std::string& s) { return std::stoull(s); };
    c.seeds_init = r.list<std::uint64_t>("seeds.init", c.seeds_init, parse_seed);
    c.seeds_data = r.list<std::uint64_t>("seeds.data", c.seeds_init, parse_seed);
    c.seeds_sample = r.list<std::uint64_t>("seeds.sample", c.seeds_init, parse_seed);

    c.strategy =
        decode::parse_strategy(r.str("decode.strategy", decode::strategy_name(c.strategy)));
    c.beam_size = r.integer("decode.beam_size", c.beam_size);
    c.max_len_factor = r.real("decode.max_len_factor", c.max_len_factor);
    c.z_seed = r.u64("decode.z_seed", c.z_seed);

    c.profile_len = r.integer("diagnose.profile_len", c.profile_len);
    c.iwae_k = r.integer("diagnose.iwae_k", c.iwae_k);
    c.iwae_docs = r.integer("diagnose.iwae_docs", c.iwae_docs);

    c.ssl_regimes = r.list<int>("ssl.regimes", c.ssl_regimes,
                                [](const std::string& s) { return std::stoi(s); });
    c.ssl_g = r.integer("ssl.g", c.ssl_g);
    c.ssl_full = r.boolean("ssl.full", c.ssl_full);

    c.out_dir = r.str("out.dir", c.out_dir);

    r.reject_unknown();
    c.validate();
    return c;
}

ExperimentConfig config_from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return config_from_text(ss.str());
}

void ExperimentConfig::validate() const {
    if (corpus_source != "synth" && corpus_source != "tsv")
        throw ConfigError("corpus.source must be synth or tsv");
    if (corpus_source == "synth") synth.validate();
    if (corpus_source == "tsv" && (tsv_train.empty() || tsv_valid.empty() || tsv_test.empty()))
        throw ConfigError("corpus.tsv.{train,valid,test} are required for tsv corpora");
    if (seeds_init.empty()) throw ConfigError("seeds.init must be nonempty");
    if (seeds_data.size() != seeds_init.size() || seeds_sample.size() != seeds_init.size())
        throw ConfigError("seed lists must have equal length");
    if (lambda_list.empty() || d_list.empty())
        throw ConfigError("model.lambda_list and model.d_list must be nonempty");
    for (double l : lambda_list)
        if (l < 0) throw ConfigError("lambda must be >= 0");
    for (int d : d_list)
        if (d < 1) throw ConfigError("latent dims must be >= 1");
    if (beam_size < 1) throw ConfigError("decode.beam_size must be >= 1");
    if (max_len_factor <= 0) throw ConfigError("decode.max_len_factor must be positive");
    if (iwae_k < 1) throw ConfigError("diagnose.iwae_k must be >= 1");
    if (ssl_g < 1) throw ConfigError("ssl.g must be >= 1");
    for (int rgm : ssl_regimes)
        if (rgm < 2) throw ConfigError("ssl.regimes entries must be >= 2");
    if (out_dir.empty()) throw ConfigError("out.dir must be set");
    train_config(0).validate();
}

objectives::TrainConfig ExperimentConfig::train_config(int seed_index) const {
    objectives::TrainConfig t;
    t.lr = lr;
    t.clip_norm = clip_norm;
    t.batch_size = batch_size;
    t.patience = patience;
    t.max_halvings = max_halvings;
    t.max_epochs = max_epochs;
    t.seed_init = seeds_init.at(seed_index);
    t.seed_data = seeds_data.at(seed_index);
    t.seed_sample = seeds_sample.at(seed_index);
    return t;
}

models::ModelConfig ExperimentConfig::model_config(int latent_dim, int vocab_size,
                                                   std::uint64_t vocab_hash) const {
    models::ModelConfig m;
    m.encoder = encoder;
    m.decoder = decoder;
    m.vocab_size = vocab_size;
    m.embed_dim = embed_dim;
    m.hidden_dim = hidden_dim;
    m.uni_hidden = uni_hidden;
    m.latent_dim = latent_dim;
    m.dropout_p = dropout_p;
    m.vocab_hash = vocab_hash;
    return m;
}

std::string ExperimentConfig::resolved_text() const {
    std::map<std::string, std::string> kv;
    kv["corpus.source"] = corpus_source;
    kv["corpus.synth.num_classes"] = std::to_string(synth.num_classes);
    kv["corpus.synth.vocab_size"] = std::to_string(synth.vocab_size);
    kv["corpus.synth.doc_len_min"] = std::to_string(synth.doc_len_min);
    kv["corpus.synth.doc_len_max"] = std::to_string(synth.doc_len_max);
    kv["corpus.synth.marker_position"] =
        synth.marker_position ? std::to_string(*synth.marker_position) : "uniform";
    kv["corpus.synth.marker_strength"] = format_double(synth.marker_strength);
    kv["corpus.synth.docs_train"] = std::to_string(synth.docs_train);
    kv["corpus.synth.docs_valid"] = std::to_string(synth.docs_valid);
    kv["corpus.synth.docs_test"] = std::to_string(synth.docs_test);
    kv["corpus.synth.seed"] = std::to_string(synth_seed);
    kv["corpus.tsv.train"] = tsv_train;
    kv["corpus.tsv.valid"] = tsv_valid;
    kv["corpus.tsv.test"] = tsv_test;
    kv["corpus.lowercase"] = load.lowercase ? "true" : "false";
    kv["corpus.max_vocab"] = std::to_string(load.max_vocab);
    kv["corpus.min_freq"] = std::to_string(load.min_freq);
    kv["corpus.truncate_len"] = std::to_string(load.truncate_len);
    kv["model.encoder"] = models::encoder_name(encoder);
    kv["model.decoder"] = models::decoder_name(decoder);
    kv["model.pretrain"] = objectives::pretrain_name(pretrain);
    kv["model.embed_dim"] = std::to_string(embed_dim);
    kv["model.hidden_dim"] = std::to_string(hidden_dim);
    kv["model.uni_hidden"] = std::to_string(uni_hidden);
    kv["model.dropout_p"] = format_double(dropout_p);
    {
        std::string s;
        for (double l : lambda_list) s += (s.empty() ? "" : ",") + format_double(l);
        kv["model.lambda_list"] = s;
        s.clear();
        for (int d : d_list) s += (s.empty() ? "" : ",") + std::to_string(d);
        kv["model.d_list"] = s;
    }
    kv["train.lr"] = format_double(lr);
    kv["train.clip_norm"] = format_double(clip_norm);
    kv["train.batch_size"] = std::to_string(batch_size);
    kv["train.patience"] = std::to_string(patience);
    kv["train.max_halvings"] = std::to_string(max_halvings);
    kv["train.max_epochs"] = std::to_string(max_epochs);
    kv["train.flavor"] = objectives::flavor_name(flavor);
    kv["train.anneal_epochs"] = std::to_string(anneal_epochs);
    kv["train.lm_baseline"] = train_lm_baseline ? "true" : "false";
    {
        auto join = [](const std::vector<std::uint64_t>& v) {
            std::string s;
            for (auto x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
            return s;
        };
        kv["seeds.init"] = join(seeds_init);
        kv["seeds.data"] = join(seeds_data);
        kv["seeds.sample"] = join(seeds_sample);
    }
    kv["decode.strategy"] = decode::strategy_name(strategy);
    kv["decode.beam_size"] = std::to_string(beam_size);
    kv["decode.max_len_factor"] = format_double(max_len_factor);
    kv["decode.z_seed"] = std::to_string(z_seed);
    kv["diagnose.profile_len"] = std::to_string(profile_len);
    kv["diagnose.iwae_k"] = std::to_string(iwae_k);
    kv["diagnose.iwae_docs"] = std::to_string(iwae_docs);
    {
        std::string s;
        for (int rgm : ssl_regimes) s += (s.empty() ? "" : ",") + std::to_string(rgm);
        kv["ssl.regimes"] = s;
    }
    kv["ssl.g"] = std::to_string(ssl_g);
    kv["ssl.full"] = ssl_full ? "true" : "false";
    kv["out.dir"] = out_dir;

    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

std::string ExperimentConfig::run_id() const {
    const std::string text = resolved_text();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void apply_seed_offset(ExperimentConfig& cfg, std::uint64_t offset) {
    for (auto& s : cfg.seeds_init) s += offset;
    for (auto& s : cfg.seeds_data) s += offset;
    for (auto& s : cfg.seeds_sample) s += offset;
    cfg.synth_seed += offset;
    cfg.z_seed += offset;
}

}  // namespace vaelab::cli
