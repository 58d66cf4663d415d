#include "symgpt/vocab.hpp"

namespace symgpt {

Vocabulary Vocabulary::standard() {
  // "()*+-./", digits, the placeholder, '^', and the letters of the unary
  // function names plus 'x'.
  return from_charset("()*+-./0123456789C^cegilnopqrstx");
}

Vocabulary Vocabulary::from_charset(const std::string& chars) {
  Vocabulary v;
  v.chars_ = chars;
  for (int i = 0; i < static_cast<int>(chars.size()); ++i) {
    if (!v.char_to_id_.emplace(chars[i], i + 3).second)
      throw std::invalid_argument("duplicate character in vocabulary charset");
  }
  return v;
}

int Vocabulary::id_of(char c) const {
  auto it = char_to_id_.find(c);
  if (it == char_to_id_.end()) throw UnknownTokenError(c);
  return it->second;
}

char Vocabulary::char_of(int id) const {
  if (id < 3 || id >= size()) throw std::out_of_range("token id has no character");
  return chars_[static_cast<std::size_t>(id - 3)];
}

std::string Vocabulary::token_name(int id) const {
  switch (id) {
    case 0: return "<PAD>";
    case 1: return "<SOS>";
    case 2: return "<EOS>";
    default: return std::string(1, char_of(id));
  }
}

std::vector<int> Vocabulary::encode(const std::string& s) const {
  std::vector<int> ids;
  ids.reserve(s.size() + 2);
  ids.push_back(sos_id());
  for (char c : s) ids.push_back(id_of(c));
  ids.push_back(eos_id());
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id >= 3 && id < size()) out += char_of(id);
  }
  return out;
}

}  // namespace symgpt
