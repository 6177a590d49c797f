#include "vaelab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace vaelab::corpus {

namespace {

const char* kReservedTokens[kNumReserved] = {"<bos>", "<eos>", "<unk>", "<pad>"};

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    h ^= 0x1f;  // separator
    h *= 1099511628211ULL;
    return h;
}

}  // namespace

Vocabulary::Vocabulary() {
    for (int i = 0; i < kNumReserved; ++i) {
        tokens_.emplace_back(kReservedTokens[i]);
        id_of_[kReservedTokens[i]] = i;
        freq_[kReservedTokens[i]] = 0;
    }
}

int Vocabulary::id_of(const std::string& tok) const {
    auto it = id_of_.find(tok);
    return it == id_of_.end() ? kUnk : it->second;
}

std::int64_t Vocabulary::freq(const std::string& tok) const {
    auto it = freq_.find(tok);
    return it == freq_.end() ? 0 : it->second;
}

int Vocabulary::add_token(const std::string& tok, std::int64_t freq) {
    if (id_of_.count(tok)) throw ConfigError("vocab: duplicate token '" + tok + "'");
    const int id = size();
    tokens_.push_back(tok);
    id_of_[tok] = id;
    freq_[tok] = freq;
    return id;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& toks) const {
    std::vector<int> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(id_of(t));
    return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(token(id));
    return out;
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tokens_) h = fnv1a(h, t);
    return h;
}

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    return "?";
}

std::vector<const Document*> LabeledCorpus::docs_of(Split s) const {
    std::vector<const Document*> out;
    for (const auto& d : docs)
        if (d.split == s) out.push_back(&d);
    return out;
}

int LabeledCorpus::count_of(Split s) const {
    int n = 0;
    for (const auto& d : docs) n += d.split == s;
    return n;
}

void SynthSpec::validate() const {
    if (num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
    if (doc_len_min < 1 || doc_len_max < doc_len_min)
        throw ConfigError("synth: bad doc_len_range");
    if (marker_position && (*marker_position < 0 || *marker_position >= doc_len_min))
        throw ConfigError("synth: marker_position must be < doc_len_min");
    if (marker_strength < 0.0 || marker_strength > 1.0)
        throw ConfigError("synth: marker_strength must be in [0,1]");
    if (vocab_size < kNumReserved + num_classes + 1)
        throw ConfigError("synth: vocab_size too small for reserved + marker words");
    if (docs_train < 1 || docs_valid < 1 || docs_test < 1)
        throw ConfigError("synth: all splits need at least one document");
}

std::vector<std::string> tokenize(const std::string& text, bool lowercase) {
    std::vector<std::string> toks;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                toks.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(lowercase ? static_cast<char>(std::tolower(static_cast<unsigned char>(ch)))
                                    : ch);
        }
    }
    if (!cur.empty()) toks.push_back(cur);
    if (toks.empty()) throw EmptyDocument("tokenize: blank input");
    return toks;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& docs, int max_size,
                       int min_freq) {
    if (max_size < kNumReserved + 1)
        throw ConfigError("build_vocab: max_size must be >= " + std::to_string(kNumReserved + 1));
    if (docs.empty()) throw ConfigError("build_vocab: no documents");
    std::map<std::string, std::int64_t> counts;
    for (const auto& d : docs)
        for (const auto& t : d) ++counts[t];
    std::vector<std::pair<std::string, std::int64_t>> cand;
    for (const auto& [tok, n] : counts)
        if (n >= min_freq) cand.emplace_back(tok, n);
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    const std::size_t budget = static_cast<std::size_t>(max_size - kNumReserved);
    for (std::size_t i = 0; i < cand.size() && i < budget; ++i)
        v.add_token(cand[i].first, cand[i].second);
    return v;
}

LabeledCorpus load_corpus(const std::string& path, Split split, const Vocabulary* vocab,
                          const std::vector<std::string>* label_names, const LoadOptions& opts) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus file: " + path);

    std::vector<std::string> raw_labels;
    std::vector<std::vector<std::string>> raw_docs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("missing TAB separator in '" + path + "'", line_no);
        const std::string label = line.substr(0, tab);
        const std::string text = line.substr(tab + 1);
        if (label.empty()) throw ParseError("empty label in '" + path + "'", line_no);
        std::vector<std::string> toks;
        try {
            toks = tokenize(text, opts.lowercase);
        } catch (const EmptyDocument&) {
            throw ParseError("empty document text in '" + path + "'", line_no);
        }
        if (static_cast<int>(toks.size()) > opts.truncate_len) toks.resize(opts.truncate_len);
        raw_labels.push_back(label);
        raw_docs.push_back(std::move(toks));
    }
    if (raw_docs.empty()) throw ParseError("no documents in '" + path + "'", line_no);

    LabeledCorpus out;
    const bool fixed_labels = label_names && !label_names->empty();
    if (fixed_labels) {
        out.label_names = *label_names;
    } else {
        out.label_names = raw_labels;
        std::sort(out.label_names.begin(), out.label_names.end());
        out.label_names.erase(std::unique(out.label_names.begin(), out.label_names.end()),
                              out.label_names.end());
    }
    out.num_classes = static_cast<int>(out.label_names.size());
    out.vocab = vocab ? *vocab : build_vocab(raw_docs, opts.max_vocab, opts.min_freq);

    for (std::size_t i = 0; i < raw_docs.size(); ++i) {
        const auto it =
            std::find(out.label_names.begin(), out.label_names.end(), raw_labels[i]);
        if (it == out.label_names.end())
            throw LabelError("unknown label '" + raw_labels[i] + "' in '" + path + "'");
        Document d;
        d.label = static_cast<int>(it - out.label_names.begin());
        d.token_ids = out.vocab.encode(raw_docs[i]);
        d.split = split;
        out.docs.push_back(std::move(d));
    }
    return out;
}

LabeledCorpus load_corpus_splits(const std::string& train_path, const std::string& valid_path,
                                 const std::string& test_path, const LoadOptions& opts) {
    LabeledCorpus train = load_corpus(train_path, Split::Train, nullptr, nullptr, opts);
    LabeledCorpus valid =
        load_corpus(valid_path, Split::Valid, &train.vocab, &train.label_names, opts);
    LabeledCorpus test =
        load_corpus(test_path, Split::Test, &train.vocab, &train.label_names, opts);
    for (auto& d : valid.docs) train.docs.push_back(std::move(d));
    for (auto& d : test.docs) train.docs.push_back(std::move(d));
    return train;
}

LabeledCorpus subsample_balanced(const LabeledCorpus& corpus, int n_per_class,
                                 std::uint64_t seed, Split from) {
    if (n_per_class < 1) throw ConfigError("subsample_balanced: n_per_class must be >= 1");
    LabeledCorpus out;
    out.num_classes = corpus.num_classes;
    out.vocab = corpus.vocab;
    out.label_names = corpus.label_names;
    for (int c = 0; c < corpus.num_classes; ++c) {
        std::vector<const Document*> pool;
        for (const auto& d : corpus.docs)
            if (d.split == from && d.label == c) pool.push_back(&d);
        if (static_cast<int>(pool.size()) < n_per_class)
            throw InsufficientData("subsample_balanced: class " + std::to_string(c) + " has " +
                                   std::to_string(pool.size()) + " docs, need " +
                                   std::to_string(n_per_class));
        // Canonical order first, so the draw is a function of corpus contents
        // and seed, not of input document order.
        std::sort(pool.begin(), pool.end(), [](const Document* a, const Document* b) {
            return a->token_ids < b->token_ids;
        });
        Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(c)));
        rng.shuffle(pool);
        for (int i = 0; i < n_per_class; ++i) out.docs.push_back(*pool[i]);
    }
    return out;
}

LabeledCorpus synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    LabeledCorpus out;
    out.num_classes = spec.num_classes;
    for (int c = 0; c < spec.num_classes; ++c) {
        out.label_names.push_back("c" + std::to_string(c));
        out.vocab.add_token("mk" + std::to_string(c), 0);
    }
    const int n_background = spec.vocab_size - kNumReserved - spec.num_classes;
    const int bg_base = out.vocab.size();
    for (int i = 0; i < n_background; ++i) out.vocab.add_token("w" + std::to_string(i), 0);

    const Split splits[3] = {Split::Train, Split::Valid, Split::Test};
    const int sizes[3] = {spec.docs_train, spec.docs_valid, spec.docs_test};
    for (int s = 0; s < 3; ++s) {
        Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(s)));
        // Exactly balanced labels in shuffled order.
        std::vector<int> labels(sizes[s]);
        for (int i = 0; i < sizes[s]; ++i) labels[i] = i % spec.num_classes;
        rng.shuffle(labels);
        for (int i = 0; i < sizes[s]; ++i) {
            Document d;
            d.label = labels[i];
            d.split = splits[s];
            const int len =
                spec.doc_len_min +
                static_cast<int>(rng.uniform_int(spec.doc_len_max - spec.doc_len_min + 1));
            d.token_ids.resize(len);
            for (int p = 0; p < len; ++p)
                d.token_ids[p] = bg_base + static_cast<int>(rng.uniform_int(n_background));
            if (rng.uniform() < spec.marker_strength) {
                const int pos = spec.marker_position
                                    ? *spec.marker_position
                                    : static_cast<int>(rng.uniform_int(len));
                d.token_ids[pos] = kNumReserved + d.label;
            }
            out.docs.push_back(std::move(d));
        }
    }
    return out;
}

void write_tsv(const LabeledCorpus& corpus, Split split, const std::string& path) {
    std::ofstream outf(path);
    if (!outf) throw IoError("cannot write corpus file: " + path);
    for (const auto& d : corpus.docs) {
        if (d.split != split) continue;
        outf << corpus.label_names.at(d.label) << '\t';
        for (std::size_t i = 0; i < d.token_ids.size(); ++i) {
            if (i) outf << ' ';
            outf << corpus.vocab.token(d.token_ids[i]);
        }
        outf << '\n';
    }
}

}  // namespace vaelab::corpus
