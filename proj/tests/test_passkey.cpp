#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tda/passkey.hpp"
#include "tda/rng.hpp"

using namespace tda;

namespace {

// scoring-sanity stub: parses the needle back out of the prompt
struct EchoOracle : TextGenerator {
    std::string generate(const std::string& prompt, int) override {
        auto key = extract_passkey(prompt);
        REQUIRE(key.has_value());
        return " " + std::to_string(*key) + ".";
    }
};

struct ConstantWrong : TextGenerator {
    std::string generate(const std::string&, int) override { return "77777"; }
};

}  // namespace

TEST_CASE("prompt structure: five blocks with the fixed strings verbatim") {
    auto trial = build_prompt(512, 42, byte_tokenizer);
    auto blocks = split_blocks(trial.prompt);
    CHECK(blocks.instruction == kPasskeyInstruction);
    CHECK(blocks.query == kPasskeyQuery);
    const std::string x = std::to_string(trial.passkey);
    CHECK(blocks.needle == "The pass key is " + x + ". Remember it. " + x + " is the pass key.");
    CHECK(static_cast<std::int64_t>(blocks.garbage_prefix.size()) == trial.prefix_chars);
    CHECK(static_cast<std::int64_t>(blocks.garbage_suffix.size()) == trial.suffix_chars);
    // garbage blocks are prefixes of the repeated filler sentence
    CHECK(std::string(kGarbageSentence).rfind(blocks.garbage_prefix.substr(
              0, std::min<std::size_t>(blocks.garbage_prefix.size(), kGarbageSentence.size())), 0) == 0);
}

TEST_CASE("parser re-extracts the passkey from every trial") {
    for (const std::int64_t len : {std::int64_t(256), std::int64_t(512), std::int64_t(1024),
                                   std::int64_t(2048)}) {
        for (int t = 0; t < 100; ++t) {
            auto trial = build_prompt(len, mix_seed(7, static_cast<std::uint64_t>(len),
                                                    static_cast<std::uint64_t>(t)),
                                      byte_tokenizer);
            auto got = extract_passkey(trial.prompt);
            REQUIRE(got.has_value());
            CHECK(*got == trial.passkey);
            // length calibration within +/-2%
            CHECK(std::fabs(static_cast<double>(trial.achieved_len - len)) <= 0.02 * len);
        }
    }
}

TEST_CASE("prompts are byte-identical for a fixed seed") {
    auto a = build_prompt(600, 9001, byte_tokenizer);
    auto b = build_prompt(600, 9001, byte_tokenizer);
    CHECK(a.prompt == b.prompt);
    CHECK(a.passkey == b.passkey);
    CHECK(a.prefix_chars == b.prefix_chars);
}

TEST_CASE("passkey distribution is uniform on [1, 50000]") {
    const int n = 10000;
    int bins[10] = {};
    int min_key = kPasskeyMax + 1, max_key = 0;
    for (int s = 0; s < n; ++s) {
        auto trial = build_prompt(400, static_cast<std::uint64_t>(s) + 1, byte_tokenizer);
        min_key = std::min(min_key, trial.passkey);
        max_key = std::max(max_key, trial.passkey);
        const int bin = (trial.passkey - 1) * 10 / kPasskeyMax;
        bins[std::min(bin, 9)] += 1;
    }
    CHECK(min_key >= kPasskeyMin);
    CHECK(max_key <= kPasskeyMax);
    double chi2 = 0.0;
    const double expected = n / 10.0;
    for (const int b : bins) chi2 += (b - expected) * (b - expected) / expected;
    // chi-square critical value, df = 9, p = 0.001
    CHECK(chi2 < 27.877164871256568);
}

TEST_CASE("too-small targets raise the documented error") {
    // instruction + needle + query alone exceed 128 bytes at byte level
    CHECK_THROWS_AS(build_prompt(128, 1, byte_tokenizer), std::invalid_argument);
}

TEST_CASE("answer scoring") {
    CHECK(score_answer("1234", 1234));
    CHECK(score_answer(" 1234\n", 1234));
    CHECK(score_answer("1234. The gras", 1234));
    CHECK(!score_answer("123", 1234));
    CHECK(!score_answer("", 1234));
    CHECK(!score_answer("the pass key is", 1234));
}

TEST_CASE("run_trials: echo stub scores 1.0, constant wrong scores 0.0") {
    const std::int64_t lengths[] = {256, 512};
    EchoOracle echo;
    auto rows = run_trials(echo, lengths, 25, 5, byte_tokenizer);
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) {
        CHECK(r.correct == 25);
        CHECK(r.accuracy == 1.0);
    }

    ConstantWrong wrong;
    auto bad = run_trials(wrong, lengths, 10, 5, byte_tokenizer);
    for (const auto& r : bad) CHECK(r.accuracy == 0.0);

    const std::string csv = passkey_csv(rows);
    CHECK(csv.rfind("length,trials,correct,accuracy\n", 0) == 0);
    CHECK(csv.find("256,25,25,1") != std::string::npos);
}

TEST_CASE("per-trial seeds differ across trials but reproduce across runs") {
    const std::int64_t lengths[] = {300};
    EchoOracle echo;
    std::vector<TrialResult> d1, d2;
    run_trials(echo, lengths, 5, 123, byte_tokenizer, 12, &d1);
    run_trials(echo, lengths, 5, 123, byte_tokenizer, 12, &d2);
    REQUIRE(d1.size() == d2.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < d1.size(); ++i) {
        CHECK(d1[i].trial.prompt == d2[i].trial.prompt);
        for (std::size_t j = i + 1; j < d1.size(); ++j)
            any_diff = any_diff || d1[i].trial.passkey != d1[j].trial.passkey;
    }
    CHECK(any_diff);
}
