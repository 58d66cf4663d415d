#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace symgpt {

struct UnknownTokenError : std::runtime_error {
  explicit UnknownTokenError(char c)
      : std::runtime_error(std::string("character '") + c + "' is not in the vocabulary"),
        character(c) {}
  char character;
};

// Character-level vocabulary: <PAD>=0, <SOS>=1, <EOS>=2, then one id per
// character. The standard charset covers every character to_infix_string can
// emit, in ASCII order so ids are stable across runs.
class Vocabulary {
 public:
  static Vocabulary standard();
  static Vocabulary from_charset(const std::string& chars);

  int pad_id() const { return 0; }
  int sos_id() const { return 1; }
  int eos_id() const { return 2; }
  int size() const { return static_cast<int>(chars_.size()) + 3; }

  bool contains(char c) const { return char_to_id_.count(c) != 0; }
  int id_of(char c) const;
  char char_of(int id) const;
  std::string token_name(int id) const;

  const std::string& charset() const { return chars_; }

  // [<SOS>, chars..., <EOS>]; UnknownTokenError on out-of-vocabulary input.
  std::vector<int> encode(const std::string& s) const;

  // Drops special tokens; decode(encode(s)) == s.
  std::string decode(std::span<const int> ids) const;

 private:
  std::string chars_;
  std::unordered_map<char, int> char_to_id_;
};

}  // namespace symgpt
