#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mixforge/mix_engine.hpp"
#include "mixforge/prompt_model.hpp"
#include "mixforge/train_eval.hpp"

namespace mixforge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

struct CorpusSizes {
    std::map<mix::Split, mix::ToyCorpusConfig> per_split;
    CorpusSizes();
};

// Every key the config file and overrides accept, in one flat namespace.
struct Settings {
    model::ModelConfig model;
    train::TrainConfig train;
    mix::PairingOptions pairing;
    CorpusSizes corpus;

    // Throws UsageError for unknown keys or malformed values.
    void apply(const std::string& key, const std::string& value);
    std::map<std::string, std::string> to_map() const;
};

// key = value per line; '#' starts a comment. Throws DataError when the file
// cannot be read and UsageError on a malformed line.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);
std::pair<std::string, std::string> split_assignment(const std::string& text);

// Generates train/dev/eval toy pools under out_dir/<split>/.
void generate_corpus(const CorpusSizes& sizes, std::uint64_t seed, const std::filesystem::path& out_dir);

// Runs one CLI invocation (args exclude the program name). Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mixforge::cli
