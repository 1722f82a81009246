#pragma once

// JSON/CSV forms of configs and results. Objects use insertion-ordered keys so
// that identical inputs serialize to identical bytes. Parsers reject unknown
// keys with ConfigError.

#include "jam/embed_io.hpp"
#include "jam/evalkit.hpp"
#include "jam/losses.hpp"
#include "jam/metrics.hpp"
#include "jam/nnet.hpp"
#include "jam/trainer.hpp"

#include <nlohmann/json.hpp>

#include <initializer_list>
#include <string>
#include <vector>

namespace jam::serialize {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

Json to_json(const nn::AutoencoderConfig& cfg);
nn::AutoencoderConfig autoencoder_config_from_json(const Json& j);

Json to_json(const loss::SimilarityConfig& cfg);
loss::SimilarityConfig similarity_config_from_json(const Json& j);

Json to_json(const io::SynthConfig& cfg);
io::SynthConfig synth_config_from_json(const Json& j);

Json to_json(const metrics::ReportConfig& cfg);
metrics::ReportConfig report_config_from_json(const Json& j);
Json to_json(const metrics::AlignmentReport& report);
/// Header `setting,metric,value,error`; one row per cell.
std::string to_csv(const metrics::AlignmentReport& report);

/// Flat key/value form of a training configuration; the same keys the CLI
/// accepts. Hidden dims, dropout and layer-norm eps are shared by both
/// autoencoders.
Json to_json(const train::TrainConfig& cfg);
train::TrainConfig train_config_from_json(const Json& j);

Json to_json(const train::TrainHistory& h);
Json to_json(const eval::RetrievalResult& r);
Json to_json(const eval::Aggregate& a);
Json to_json(const train::SweepReport& s);

/// Value kinds of flat config keys, used to turn command-line strings into JSON.
enum class KeyKind { Unsigned, Real, Bool, Text, UnsignedList, RealList };

struct KeySpec {
  const char* name;
  KeyKind kind;
};

const std::vector<KeySpec>& synth_config_keys();
const std::vector<KeySpec>& report_config_keys();
const std::vector<KeySpec>& train_config_keys();

/// Parses a flag value ("5,42,55" for lists; an empty string is an empty list).
/// Throws ConfigError on malformed input.
Json parse_key_value(const KeySpec& key, const std::string& text);

/// Throws ConfigError naming the first key of j not in `allowed`.
void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

}  // namespace jam::serialize
