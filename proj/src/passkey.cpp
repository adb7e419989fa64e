#include "tda/passkey.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <random>
#include <stdexcept>

#include "tda/csv.hpp"
#include "tda/rng.hpp"

namespace tda {

namespace {

std::string needle_for(int passkey) {
    const std::string x = std::to_string(passkey);
    return "The pass key is " + x + ". Remember it. " + x + " is the pass key.";
}

// prefix of the repeated garbage buffer with exactly n chars
std::string garbage_prefix_chars(std::int64_t n) {
    std::string out;
    out.reserve(static_cast<std::size_t>(n));
    while (static_cast<std::int64_t>(out.size()) < n) {
        if (!out.empty()) out += ' ';
        out += kGarbageSentence;
    }
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string assemble(const std::string& needle, std::int64_t prefix_chars, std::int64_t suffix_chars) {
    std::string prompt;
    prompt += kPasskeyInstruction;
    prompt += '\n';
    prompt += garbage_prefix_chars(prefix_chars);
    prompt += '\n';
    prompt += needle;
    prompt += '\n';
    prompt += garbage_prefix_chars(suffix_chars);
    prompt += '\n';
    prompt += kPasskeyQuery;
    return prompt;
}

std::string_view strip(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

PromptBlocks split_blocks(const std::string& prompt) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t nl = prompt.find('\n', start);
        if (nl == std::string::npos) {
            parts.push_back(prompt.substr(start));
            break;
        }
        parts.push_back(prompt.substr(start, nl - start));
        start = nl + 1;
    }
    if (parts.size() != 5)
        throw std::invalid_argument("passkey prompt does not decompose into five blocks (got " +
                                    std::to_string(parts.size()) + ")");
    return {parts[0], parts[1], parts[2], parts[3], parts[4]};
}

std::optional<int> extract_passkey(const std::string& prompt) {
    PromptBlocks blocks;
    try {
        blocks = split_blocks(prompt);
    } catch (const std::invalid_argument&) {
        return std::nullopt;
    }
    constexpr std::string_view lead = "The pass key is ";
    if (blocks.needle.rfind(lead, 0) != 0) return std::nullopt;
    int value = 0;
    const char* first = blocks.needle.data() + lead.size();
    const char* last = blocks.needle.data() + blocks.needle.size();
    auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc{} || res.ptr == first) return std::nullopt;
    // both occurrences must agree
    const std::string x = std::to_string(value);
    if (blocks.needle != "The pass key is " + x + ". Remember it. " + x + " is the pass key.")
        return std::nullopt;
    return value;
}

PasskeyTrial build_prompt(std::int64_t target_len, std::uint64_t seed, const Tokenizer& tok) {
    if (target_len < 1) throw std::invalid_argument("build_prompt: target_len must be >= 1");
    auto rng = make_engine(seed, ScopePasskey);
    std::uniform_int_distribution<int> key_dist(kPasskeyMin, kPasskeyMax);
    const int passkey = key_dist(rng);
    const std::string needle = needle_for(passkey);

    const double tol = 0.02 * static_cast<double>(target_len);
    auto length_at = [&](std::int64_t garbage) {
        return tok(assemble(needle, garbage, 0));
    };

    // bisect total garbage chars; prompt token length is monotone in it
    const std::int64_t floor_len = length_at(0);
    if (static_cast<double>(floor_len) > static_cast<double>(target_len) + tol)
        throw std::invalid_argument(
            "build_prompt: target_len " + std::to_string(target_len) +
            " too small; instruction+needle+query alone tokenize to " + std::to_string(floor_len));

    std::int64_t lo = 0, hi = 16;
    while (length_at(hi) < target_len) {
        hi *= 2;
        if (hi > (std::int64_t(1) << 32)) throw std::runtime_error("build_prompt: calibration overflow");
    }
    while (lo < hi) {
        const std::int64_t mid = lo + (hi - lo) / 2;
        if (length_at(mid) < target_len)
            lo = mid + 1;
        else
            hi = mid;
    }
    // lo is the smallest garbage count reaching target; check tolerance both sides
    std::int64_t garbage = lo;
    const std::int64_t above = length_at(lo);
    const std::int64_t below = lo > 0 ? length_at(lo - 1) : floor_len;
    if (std::llabs(above - target_len) > std::llabs(below - target_len) && lo > 0) {
        garbage = lo - 1;
    }
    const std::int64_t achieved = length_at(garbage);
    if (std::fabs(static_cast<double>(achieved - target_len)) > tol)
        throw std::invalid_argument("build_prompt: cannot calibrate length " +
                                    std::to_string(target_len) + " (closest achievable " +
                                    std::to_string(achieved) + ")");

    std::uniform_int_distribution<std::int64_t> split_dist(0, garbage);
    const std::int64_t prefix = split_dist(rng);

    PasskeyTrial trial;
    trial.target_len = target_len;
    trial.passkey = passkey;
    trial.prefix_chars = prefix;
    trial.suffix_chars = garbage - prefix;
    trial.seed = seed;
    trial.prompt = assemble(needle, prefix, garbage - prefix);
    trial.achieved_len = tok(trial.prompt);
    return trial;
}

bool score_answer(std::string_view answer, int passkey) {
    const std::string_view s = strip(answer);
    const std::string expect = std::to_string(passkey);
    if (s == expect) return true;
    int value = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), value);
    if (res.ec != std::errc{} || res.ptr == s.data()) return false;
    return value == passkey;
}

std::vector<LengthRow> run_trials(TextGenerator& model, std::span<const std::int64_t> lengths,
                                  int trials_per_len, std::uint64_t seed, const Tokenizer& tok,
                                  int max_new_tokens, std::vector<TrialResult>* details) {
    std::vector<LengthRow> rows;
    rows.reserve(lengths.size());
    for (const std::int64_t len : lengths) {
        LengthRow row;
        row.length = len;
        row.trials = trials_per_len;
        for (int t = 0; t < trials_per_len; ++t) {
            const std::uint64_t trial_seed = mix_seed(seed, static_cast<std::uint64_t>(len),
                                                      static_cast<std::uint64_t>(t));
            PasskeyTrial trial = build_prompt(len, trial_seed, tok);
            TrialResult res;
            res.trial = trial;
            try {
                res.model_answer = model.generate(trial.prompt, max_new_tokens);
                res.correct = score_answer(res.model_answer, trial.passkey);
            } catch (const std::exception&) {
                res.correct = false;  // decode failures count as incorrect
            }
            if (res.correct) ++row.correct;
            if (details) details->push_back(std::move(res));
        }
        row.accuracy = trials_per_len ? static_cast<double>(row.correct) / trials_per_len : 0.0;
        rows.push_back(row);
    }
    return rows;
}

std::string passkey_csv(std::span<const LengthRow> rows) {
    std::string s = "length,trials,correct,accuracy\n";
    for (const auto& r : rows)
        s += std::to_string(r.length) + ',' + std::to_string(r.trials) + ',' +
             std::to_string(r.correct) + ',' + fmt_double(r.accuracy) + '\n';
    return s;
}

}  // namespace tda
