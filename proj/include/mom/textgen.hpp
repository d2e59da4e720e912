#pragma once

// Deterministic English-like text generator for the bundled corpus and
// training tests. Words follow a sparse successor graph, so the byte
// stream has high unigram entropy but low conditional entropy - exactly
// the gap a language model should close.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mom/rng.hpp"

namespace mom {

// `successors` dials conditional difficulty: each word can flow to that
// many others, so bigger values mean more next-word entropy to model.
inline std::string generate_corpus(size_t target_bytes, uint64_t seed,
                                   size_t successors = 6) {
    static const std::array<const char*, 120> kWords = {
        "the",     "of",      "and",      "to",       "in",      "a",
        "is",      "that",    "for",      "it",       "as",      "was",
        "with",    "be",      "by",       "on",       "not",     "he",
        "this",    "are",     "or",       "his",      "from",    "at",
        "which",   "but",     "have",     "an",       "had",     "they",
        "you",     "were",    "their",    "one",      "all",     "we",
        "can",     "her",     "has",      "there",    "been",    "if",
        "more",    "when",    "will",     "would",    "who",     "so",
        "no",      "she",     "other",    "its",      "may",     "these",
        "what",    "them",    "than",     "some",     "him",     "time",
        "into",    "only",    "could",    "new",      "two",     "our",
        "work",    "first",   "must",     "good",     "years",   "such",
        "through", "between", "people",   "same",     "under",   "last",
        "world",   "system",  "great",    "state",    "never",   "small",
        "found",   "might",   "water",    "still",    "own",     "old",
        "make",    "part",    "house",    "place",    "long",    "little",
        "hand",    "life",    "without",  "form",     "light",   "point",
        "right",   "day",     "well",     "thing",    "man",     "three",
        "word",    "way",     "most",     "number",   "sound",   "city",
        "night",   "many",    "course",   "machine",  "river",   "story",
    };
    if (successors < 1) successors = 1;
    if (successors > kWords.size()) successors = kWords.size();

    Rng rng(seed);
    // Sparse successor graph: each word flows to a fixed candidate set.
    std::vector<std::vector<size_t>> next(kWords.size(), std::vector<size_t>(successors));
    for (auto& row : next)
        for (auto& s : row) s = static_cast<size_t>(rng.next_below(kWords.size()));

    std::string out;
    out.reserve(target_bytes + 64);
    size_t word = 0;
    size_t sentence_len = 0;
    bool capitalize = true;
    while (out.size() < target_bytes) {
        std::string w = kWords[word];
        if (capitalize) {
            w[0] = static_cast<char>(w[0] - 'a' + 'A');
            capitalize = false;
        }
        out += w;
        ++sentence_len;
        const bool end_sentence =
            sentence_len >= 4 && rng.next_below(10) < (sentence_len >= 12 ? 10 : 2);
        if (end_sentence) {
            out += rng.next_below(8) == 0 ? "?" : ".";
            out += rng.next_below(6) == 0 ? "\n" : " ";
            sentence_len = 0;
            capitalize = true;
        } else {
            out += rng.next_below(24) == 0 ? ", " : " ";
        }
        word = next[word][rng.next_below(successors)];
    }
    out.resize(target_bytes);
    return out;
}

}  // namespace mom
