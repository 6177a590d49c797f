#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vaelab/errors.hpp"
#include "vaelab/rng.hpp"

namespace vaelab::corpus {

// Reserved token ids. These never move.
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kUnk = 2;
inline constexpr int kPad = 3;
inline constexpr int kNumReserved = 4;

class Vocabulary {
  public:
    Vocabulary();

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const { return tokens_.at(id); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    // Id for a token, UNK for out-of-vocabulary.
    int id_of(const std::string& tok) const;
    bool contains(const std::string& tok) const { return id_of_.count(tok) > 0; }
    std::int64_t freq(const std::string& tok) const;

    // Appends a non-reserved token; id is the current size.
    int add_token(const std::string& tok, std::int64_t freq);

    std::vector<int> encode(const std::vector<std::string>& toks) const;
    std::vector<std::string> decode(const std::vector<int>& ids) const;

    // Order-sensitive content hash, used to bind checkpoints to a corpus.
    std::uint64_t hash() const;

  private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> id_of_;
    std::map<std::string, std::int64_t> freq_;
};

enum class Split { Train = 0, Valid = 1, Test = 2 };

const char* split_name(Split s);

struct Document {
    std::vector<int> token_ids;  // excludes BOS/EOS
    int label = 0;
    Split split = Split::Train;

    int raw_len() const { return static_cast<int>(token_ids.size()); }
};

struct LabeledCorpus {
    std::vector<Document> docs;
    int num_classes = 0;
    Vocabulary vocab;
    std::vector<std::string> label_names;

    std::vector<const Document*> docs_of(Split s) const;
    int count_of(Split s) const;
};

struct SynthSpec {
    int num_classes = 4;
    int vocab_size = 200;  // total ids including reserved and marker words
    int doc_len_min = 8;
    int doc_len_max = 14;
    std::optional<int> marker_position;  // nullopt: uniform over positions
    double marker_strength = 1.0;
    int docs_train = 5000;
    int docs_valid = 1000;
    int docs_test = 1000;

    void validate() const;
};

// Whitespace tokenization; throws EmptyDocument on blank input.
std::vector<std::string> tokenize(const std::string& text, bool lowercase);

// Top-(max_size-4) tokens by frequency, ties broken lexicographically;
// tokens below min_freq excluded.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& docs, int max_size,
                       int min_freq);

struct LoadOptions {
    bool lowercase = true;
    int max_vocab = 20000;
    int min_freq = 1;
    int truncate_len = 60;
};

// One TSV file ("label<TAB>text" per line) into one split. When `vocab` is
// null a vocabulary is built from this file (callers load train first). Label
// strings map to dense ids; when `label_names` is non-null and non-empty it
// fixes the label set and unseen labels raise LabelError.
LabeledCorpus load_corpus(const std::string& path, Split split, const Vocabulary* vocab,
                          const std::vector<std::string>* label_names,
                          const LoadOptions& opts = {});

// Train/valid/test TSVs with vocabulary and label set built from train.
LabeledCorpus load_corpus_splits(const std::string& train_path, const std::string& valid_path,
                                 const std::string& test_path, const LoadOptions& opts = {});

// Exactly n_per_class train-split documents per class, sampled without
// replacement, invariant to input document order.
LabeledCorpus subsample_balanced(const LabeledCorpus& corpus, int n_per_class,
                                 std::uint64_t seed, Split from = Split::Train);

// Synthetic corpus with a controllable label-marker position.
LabeledCorpus synth_corpus(const SynthSpec& spec, std::uint64_t seed);

// Serialize one split back to the TSV input format.
void write_tsv(const LabeledCorpus& corpus, Split split, const std::string& path);

}  // namespace vaelab::corpus
