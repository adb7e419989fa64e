#include "tda/corpus.hpp"

#include <fstream>
#include <random>
#include <stdexcept>

#include "tda/rng.hpp"

namespace tda {

ByteCorpus ByteCorpus::from_string(const std::string& text, double val_fraction) {
    if (text.size() < 16) throw std::invalid_argument("corpus too small");
    if (!(val_fraction > 0.0) || !(val_fraction < 1.0))
        throw std::invalid_argument("val_fraction must be in (0, 1)");
    ByteCorpus c;
    c.bytes.assign(text.begin(), text.end());
    c.val_end = static_cast<std::size_t>(static_cast<double>(text.size()) * val_fraction);
    if (c.val_end == 0 || c.val_end >= c.bytes.size())
        throw std::invalid_argument("val_fraction leaves an empty split");
    return c;
}

ByteCorpus ByteCorpus::from_file(const std::string& path, double val_fraction) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_string(text, val_fraction);
}

namespace {

const char* kNouns[] = {
    "river",  "market",  "engine",  "garden", "letter",  "window",  "harbor", "signal",
    "bridge", "lantern", "teacher", "forest", "village", "machine", "winter", "captain",
    "meadow", "journal", "station", "circle", "stone",   "ladder",  "valley", "mirror",
    "anchor", "orchard", "cellar",  "hammer", "needle",  "barrel",  "island", "shadow"};
const char* kAdjectives[] = {"quiet", "bright", "narrow", "heavy",  "ancient", "gentle",
                             "rapid", "hollow", "steady", "silver", "crooked", "patient",
                             "warm",  "broad",  "simple", "distant"};
const char* kVerbs[] = {"carried", "watched", "repaired", "followed", "measured", "opened",
                        "crossed", "gathered", "painted",  "counted",  "visited",  "studied",
                        "built",   "traded",   "guarded",  "cleaned"};
const char* kNames[] = {"Anna", "Morten", "Ilse", "Tomas", "Greta", "Oskar", "Lena", "Pavel"};
const char* kPlaces[] = {"the north road", "the old town", "the lower field", "the east gate",
                         "the mill yard",  "the long pier", "the stone court", "the high pass"};

template <std::size_t N>
const char* pick(const char* (&arr)[N], std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(0, N - 1);
    return arr[d(rng)];
}

std::string sentence(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> form(0, 5);
    std::string s;
    switch (form(rng)) {
        case 0:
            s = std::string("The ") + pick(kAdjectives, rng) + " " + pick(kNouns, rng) + " near " +
                pick(kPlaces, rng) + " " + pick(kVerbs, rng) + " the " + pick(kNouns, rng) + ".";
            break;
        case 1:
            s = std::string(pick(kNames, rng)) + " " + pick(kVerbs, rng) + " the " +
                pick(kAdjectives, rng) + " " + pick(kNouns, rng) + " before dawn.";
            break;
        case 2:
            s = std::string("Every morning the ") + pick(kNouns, rng) + " by " + pick(kPlaces, rng) +
                " looked " + pick(kAdjectives, rng) + " and " + pick(kAdjectives, rng) + ".";
            break;
        case 3:
            s = std::string(pick(kNames, rng)) + " and " + pick(kNames, rng) + " " +
                pick(kVerbs, rng) + " a " + pick(kNouns, rng) + " at " + pick(kPlaces, rng) + ".";
            break;
        case 4:
            s = std::string("Nobody ") + pick(kVerbs, rng) + " the " + pick(kNouns, rng) +
                " while the " + pick(kNouns, rng) + " stayed " + pick(kAdjectives, rng) + ".";
            break;
        default:
            s = std::string("In winter the ") + pick(kNouns, rng) + " of " + pick(kPlaces, rng) +
                " turned " + pick(kAdjectives, rng) + ", and " + pick(kNames, rng) + " " +
                pick(kVerbs, rng) + " it twice.";
            break;
    }
    return s;
}

}  // namespace

std::string make_synthetic_corpus(std::size_t size_bytes, std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, 0x636f7270));
    std::string out;
    out.reserve(size_bytes + 256);
    std::uniform_int_distribution<int> para_len(3, 7);
    while (out.size() < size_bytes) {
        const int n = para_len(rng);
        for (int i = 0; i < n && out.size() < size_bytes; ++i) {
            out += sentence(rng);
            out += ' ';
        }
        out += '\n';
    }
    out.resize(size_bytes);
    return out;
}

}  // namespace tda
