#include <string>
#include <string_view>

#include "storyanchor/metrics.hpp"

namespace storyanchor::metrics {
namespace {

bool is_vowel_letter(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

/// A 'y' is a consonant at the start of a word or after a vowel.
bool is_consonant(const std::string& w, size_t i) {
  if (is_vowel_letter(w[i])) return false;
  if (w[i] == 'y') return i == 0 || !is_consonant(w, i - 1);
  return true;
}

/// m in [C](VC)^m[V].
int measure(const std::string& stem) {
  int m = 0;
  bool prev_vowel = false;
  for (size_t i = 0; i < stem.size(); ++i) {
    const bool consonant = is_consonant(stem, i);
    if (consonant && prev_vowel) ++m;
    prev_vowel = !consonant;
  }
  return m;
}

bool contains_vowel(const std::string& stem) {
  for (size_t i = 0; i < stem.size(); ++i) {
    if (!is_consonant(stem, i)) return true;
  }
  return false;
}

bool ends_double_consonant(const std::string& w) {
  const size_t n = w.size();
  return n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1);
}

bool ends_cvc(const std::string& w) {
  const size_t n = w.size();
  return n >= 3 && is_consonant(w, n - 3) && !is_consonant(w, n - 2) && is_consonant(w, n - 1) && w[n - 1] != 'w' &&
         w[n - 1] != 'x' && w[n - 1] != 'y';
}

bool ends_with(const std::string& w, std::string_view suffix) {
  return w.size() >= suffix.size() && std::string_view(w).substr(w.size() - suffix.size()) == suffix;
}

std::string drop(const std::string& w, size_t n) { return w.substr(0, w.size() - n); }

enum class Cond { kNone, kMeasure0, kMeasure1, kIon };

struct Rule {
  std::string_view suffix;
  std::string_view replacement;
  Cond cond;
};

bool holds(Cond cond, const std::string& stem) {
  switch (cond) {
    case Cond::kNone:
      return true;
    case Cond::kMeasure0:
      return measure(stem) > 0;
    case Cond::kMeasure1:
      return measure(stem) > 1;
    case Cond::kIon:
      return measure(stem) > 1 && !stem.empty() && (stem.back() == 's' || stem.back() == 't');
  }
  return false;
}

/// The first rule whose suffix matches decides; later rules are not tried.
template <size_t N>
std::string apply_rules(const std::string& w, const Rule (&rules)[N]) {
  for (const Rule& r : rules) {
    if (ends_with(w, r.suffix)) {
      const std::string stem = drop(w, r.suffix.size());
      return holds(r.cond, stem) ? stem + std::string(r.replacement) : w;
    }
  }
  return w;
}

constexpr Rule kStep1a[] = {{"sses", "ss", Cond::kNone}, {"ies", "i", Cond::kNone}, {"ss", "ss", Cond::kNone},
                            {"s", "", Cond::kNone}};

constexpr Rule kStep2[] = {
    {"ational", "ate", Cond::kMeasure0}, {"tional", "tion", Cond::kMeasure0}, {"enci", "ence", Cond::kMeasure0},
    {"anci", "ance", Cond::kMeasure0},   {"izer", "ize", Cond::kMeasure0},    {"abli", "able", Cond::kMeasure0},
    {"alli", "al", Cond::kMeasure0},     {"entli", "ent", Cond::kMeasure0},   {"eli", "e", Cond::kMeasure0},
    {"ousli", "ous", Cond::kMeasure0},   {"ization", "ize", Cond::kMeasure0}, {"ation", "ate", Cond::kMeasure0},
    {"ator", "ate", Cond::kMeasure0},    {"alism", "al", Cond::kMeasure0},    {"iveness", "ive", Cond::kMeasure0},
    {"fulness", "ful", Cond::kMeasure0}, {"ousness", "ous", Cond::kMeasure0}, {"aliti", "al", Cond::kMeasure0},
    {"iviti", "ive", Cond::kMeasure0},   {"biliti", "ble", Cond::kMeasure0},
};

constexpr Rule kStep3[] = {
    {"icate", "ic", Cond::kMeasure0}, {"ative", "", Cond::kMeasure0}, {"alize", "al", Cond::kMeasure0},
    {"iciti", "ic", Cond::kMeasure0}, {"ical", "ic", Cond::kMeasure0}, {"ful", "", Cond::kMeasure0},
    {"ness", "", Cond::kMeasure0},
};

constexpr Rule kStep4[] = {
    {"al", "", Cond::kMeasure1},   {"ance", "", Cond::kMeasure1}, {"ence", "", Cond::kMeasure1},
    {"er", "", Cond::kMeasure1},   {"ic", "", Cond::kMeasure1},   {"able", "", Cond::kMeasure1},
    {"ible", "", Cond::kMeasure1}, {"ant", "", Cond::kMeasure1},  {"ement", "", Cond::kMeasure1},
    {"ment", "", Cond::kMeasure1}, {"ent", "", Cond::kMeasure1},  {"ion", "", Cond::kIon},
    {"ou", "", Cond::kMeasure1},   {"ism", "", Cond::kMeasure1},  {"ate", "", Cond::kMeasure1},
    {"iti", "", Cond::kMeasure1},  {"ous", "", Cond::kMeasure1},  {"ive", "", Cond::kMeasure1},
    {"ize", "", Cond::kMeasure1},
};

std::string step1b(const std::string& w) {
  if (ends_with(w, "eed")) {
    const std::string stem = drop(w, 3);
    return measure(stem) > 0 ? stem + "ee" : w;
  }
  std::string stem;
  if (ends_with(w, "ed") && contains_vowel(drop(w, 2))) {
    stem = drop(w, 2);
  } else if (ends_with(w, "ing") && contains_vowel(drop(w, 3))) {
    stem = drop(w, 3);
  } else {
    return w;
  }
  if (ends_with(stem, "at") || ends_with(stem, "bl") || ends_with(stem, "iz")) return stem + "e";
  if (ends_double_consonant(stem)) {
    const char last = stem.back();
    return last == 'l' || last == 's' || last == 'z' ? stem : drop(stem, 1);
  }
  if (measure(stem) == 1 && ends_cvc(stem)) return stem + "e";
  return stem;
}

std::string step1c(const std::string& w) {
  if (ends_with(w, "y") && contains_vowel(drop(w, 1))) return drop(w, 1) + "i";
  return w;
}

std::string step5(std::string w) {
  if (ends_with(w, "e")) {
    const std::string stem = drop(w, 1);
    const int m = measure(stem);
    if (m > 1 || (m == 1 && !ends_cvc(stem))) w = stem;
  }
  if (ends_with(w, "ll") && measure(drop(w, 1)) > 1) w = drop(w, 1);
  return w;
}

}  // namespace

std::string porter_stem(std::string_view word) {
  std::string w(word);
  for (char& c : w) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  // Words of one or two letters are left alone, as in the reference
  // implementation.
  if (w.size() <= 2) return w;
  for (const char c : w) {
    if (c < 'a' || c > 'z') return w;
  }
  w = apply_rules(w, kStep1a);
  w = step1b(w);
  w = step1c(w);
  w = apply_rules(w, kStep2);
  w = apply_rules(w, kStep3);
  w = apply_rules(w, kStep4);
  return step5(w);
}

}  // namespace storyanchor::metrics
