// SPDX-License-Identifier: Apache-2.0
//
// Transcript records and the two feature matrices fed to the classifiers:
// the PoS count matrix (tags × utterances) and the sentence-embedding matrix
// (utterances × embedding dim).
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cattn/tensor.hpp"

namespace cattn {

enum class Label : int { Control = 0, Patient = 1 };

struct Token {
  std::string text;
  std::string tag;

  bool operator==(const Token&) const = default;
};

using Utterance = std::vector<Token>;

struct Record {
  std::string id;
  Label label = Label::Control;
  std::vector<Utterance> utterances;
  /// One vector per utterance when present.
  std::optional<std::vector<std::vector<double>>> embeddings;

  bool operator==(const Record&) const = default;
};

/// Utterance text with tokens joined by single spaces.
std::string utterance_text(const Utterance& u);

/// The 36-tag Penn Treebank set in canonical order.
class TagVocabulary {
public:
  static constexpr std::size_t kSize = 36;

  static const TagVocabulary& penn_treebank();

  std::size_t size() const { return tags_.size(); }
  std::string_view tag(std::size_t i) const { return tags_[i]; }
  std::optional<std::size_t> index_of(std::string_view tag) const;
  const std::array<std::string_view, kSize>& tags() const { return tags_; }

private:
  TagVocabulary();
  std::array<std::string_view, kSize> tags_;
};

inline constexpr std::size_t kDefaultUtterances = 17;

/// Keeps the first `budget` utterances, or pads with empty utterances (and
/// zero embeddings) up to `budget`.
Record fix_length(const Record& r, std::size_t budget = kDefaultUtterances);

/// [36 × budget] tag counts per utterance after fix_length. Unknown tags are
/// an IngestionError naming the tag and the record.
Tensor build_pos_matrix(const Record& r, const TagVocabulary& vocab,
                        std::size_t budget = kDefaultUtterances);

enum class EmbeddingProvider { Precomputed, HashProjection };

struct EmbeddingOptions {
  EmbeddingProvider provider = EmbeddingProvider::HashProjection;
  std::size_t dim = 64; // hash-projection width; precomputed width comes from the data
  std::uint64_t seed = 0x5eed;
};

/// [budget × d_e] embedding matrix; padding rows are exact zeros.
Tensor embed(const Record& r, const EmbeddingOptions& options,
             std::size_t budget = kDefaultUtterances);

/// Largest-remainder split of n records into 81/9/10 percent.
std::array<std::size_t, 3> split_sizes(std::size_t n);

struct DatasetSplit {
  std::vector<Record> train, validation, test;
};

/// Seeded shuffle then 81/9/10 partition. Fewer than 10 records is a
/// ConfigError.
DatasetSplit split_dataset(const std::vector<Record>& records, std::uint64_t seed);

struct SyntheticOptions {
  std::size_t n_records = 600;
  double patient_fraction = 0.81;
  double signal_strength = 0.8;
  std::uint64_t seed = 7;
  std::size_t embedding_dim = 64; // 0 disables precomputed embeddings
};

/// Tags whose rate the generator raises for patients.
const std::vector<std::string>& boosted_tags();

/// Synthetic transcripts standing in for the clinical corpus. Patients use
/// more PRP/MD/EX/NNPS tokens and carry shifted embeddings, both scaled by
/// signal_strength; at strength 0 both classes share one distribution.
std::vector<Record> generate_synthetic_corpus(const SyntheticOptions& options);

// JSON Lines corpus I/O. Each line:
//   {"id": str, "label": 0|1, "utterances": [[["tok","TAG"],...],...],
//    "embeddings": [[...],...]}   (embeddings optional)

std::string record_to_json(const Record& r);
/// Parses and validates one line; errors carry `line_no` when nonzero.
Record record_from_json(std::string_view line, std::size_t line_no = 0);
std::vector<Record> read_corpus(std::istream& in);
std::vector<Record> read_corpus_file(const std::string& path);
void write_corpus(std::ostream& out, const std::vector<Record>& records);
void write_corpus_file(const std::string& path, const std::vector<Record>& records);

} // namespace cattn
