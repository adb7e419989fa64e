#pragma once

// Passkey-retrieval trial construction and scoring. Prompts are five
// newline-joined blocks: instruction, garbage prefix, needle, garbage suffix,
// query. Garbage is a prefix of a repeated filler sentence; total garbage
// length is calibrated by bisection against the active tokenizer.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tda {

inline constexpr std::string_view kPasskeyInstruction =
    "There is an important info hidden inside a lot of irrelevant text. Find it and memorize "
    "them. I will quiz you about the important information there.";
inline constexpr std::string_view kPasskeyQuery = "What is the pass key? The pass key is";
inline constexpr std::string_view kGarbageSentence =
    "The grass is green. The sky is blue. The sun is yellow. Here we go. There and back again.";
inline constexpr int kPasskeyMin = 1;
inline constexpr int kPasskeyMax = 50000;

// Token counter for the evaluated model's tokenizer. Byte-level models count bytes.
using Tokenizer = std::function<std::int64_t(std::string_view)>;

inline std::int64_t byte_tokenizer(std::string_view s) { return static_cast<std::int64_t>(s.size()); }

struct PasskeyTrial {
    std::int64_t target_len = 0;
    int passkey = 0;
    std::int64_t prefix_chars = 0, suffix_chars = 0;
    std::string prompt;
    std::uint64_t seed = 0;
    std::int64_t achieved_len = 0;
};

struct PromptBlocks {
    std::string instruction, garbage_prefix, needle, garbage_suffix, query;
};

// Splits a prompt into its five blocks; throws unless there are exactly five.
PromptBlocks split_blocks(const std::string& prompt);

// Re-extracts the passkey from a prompt's needle block; nullopt on parse failure.
std::optional<int> extract_passkey(const std::string& prompt);

// Builds one trial. Deterministic given seed. Throws when target_len cannot
// be reached within +/-2% (target too small for the fixed blocks).
PasskeyTrial build_prompt(std::int64_t target_len, std::uint64_t seed, const Tokenizer& tok);

// Answer scoring: exact string match after whitespace stripping, or leading
// integer parse equal to the passkey.
bool score_answer(std::string_view answer, int passkey);

// Anything that can continue a text prompt (the tiny LM, or a test stub).
struct TextGenerator {
    virtual ~TextGenerator() = default;
    virtual std::string generate(const std::string& prompt, int max_new_tokens) = 0;
};

struct TrialResult {
    PasskeyTrial trial;
    std::string model_answer;
    bool correct = false;
};

struct LengthRow {
    std::int64_t length = 0;
    int trials = 0;
    int correct = 0;
    double accuracy = 0.0;
};

// Runs trials_per_len trials at every length; per-trial seeds derive from
// (seed, length, trial). Decode failures count as incorrect.
std::vector<LengthRow> run_trials(TextGenerator& model, std::span<const std::int64_t> lengths,
                                  int trials_per_len, std::uint64_t seed, const Tokenizer& tok,
                                  int max_new_tokens = 12,
                                  std::vector<TrialResult>* details = nullptr);

std::string passkey_csv(std::span<const LengthRow> rows);

}  // namespace tda
