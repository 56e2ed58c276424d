#pragma once

// Minimal non-validating XML reader producing a small DOM. Enough for TEI output of
// layout tools: elements, attributes, text, CDATA, comments, processing instructions,
// DOCTYPE (skipped) and the predefined/numeric character references.

#include <cctype>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "khub/util.hpp"

namespace khub::xml {

class parse_error : public error {
 public:
  parse_error(std::size_t byte_pos, const std::string& what)
      : error("XML error at byte " + std::to_string(byte_pos) + ": " + what), byte_pos_(byte_pos) {}
  std::size_t byte_pos() const { return byte_pos_; }

 private:
  std::size_t byte_pos_;
};

struct element;
using node = std::variant<std::string, std::unique_ptr<element>>;

struct element {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attributes;
  std::vector<node> children;

  // Name without namespace prefix.
  std::string_view local_name() const {
    auto pos = name.find(':');
    return pos == std::string::npos ? std::string_view(name) : std::string_view(name).substr(pos + 1);
  }

  const std::string* attribute(std::string_view key) const {
    for (const auto& [k, v] : attributes)
      if (k == key) return &v;
    return nullptr;
  }

  const element* first_child(std::string_view local) const {
    for (const auto& c : children)
      if (auto e = std::get_if<std::unique_ptr<element>>(&c); e && (*e)->local_name() == local)
        return e->get();
    return nullptr;
  }

  template <typename F>
  void for_each_child(F&& f) const {
    for (const auto& c : children)
      if (auto e = std::get_if<std::unique_ptr<element>>(&c)) f(**e);
  }

  // Concatenated descendant text.
  std::string text() const {
    std::string out;
    append_text(out);
    return out;
  }

  void append_text(std::string& out) const {
    for (const auto& c : children) {
      if (auto s = std::get_if<std::string>(&c))
        out += *s;
      else
        std::get<std::unique_ptr<element>>(c)->append_text(out);
    }
  }
};

namespace detail {

class reader {
 public:
  explicit reader(std::string_view src) : src_(src) {}

  std::unique_ptr<element> document() {
    skip_misc();
    if (eof() || peek() != '<') fail("expected root element");
    auto root = parse_element();
    skip_misc();
    if (!eof()) fail("content after root element");
    return root;
  }

 private:
  std::string_view src_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& what) const { throw parse_error(pos_, what); }
  bool eof() const { return pos_ >= src_.size(); }
  char peek() const { return src_[pos_]; }
  bool at(std::string_view s) const { return src_.substr(pos_, s.size()) == s; }

  void expect(std::string_view s) {
    if (!at(s)) fail("expected '" + std::string(s) + "'");
    pos_ += s.size();
  }

  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\n' || peek() == '\r')) ++pos_;
  }

  void skip_until(std::string_view terminator) {
    auto end = src_.find(terminator, pos_);
    if (end == std::string_view::npos) {
      pos_ = src_.size();
      fail("unterminated construct, expected '" + std::string(terminator) + "'");
    }
    pos_ = end + terminator.size();
  }

  void skip_doctype() {
    expect("<!DOCTYPE");
    int depth = 0;
    while (!eof()) {
      char c = src_[pos_++];
      if (c == '[') ++depth;
      else if (c == ']') --depth;
      else if (c == '>' && depth <= 0) return;
    }
    fail("unterminated DOCTYPE");
  }

  // Whitespace, comments, PIs and DOCTYPE between top-level constructs.
  void skip_misc() {
    for (;;) {
      skip_ws();
      if (at("<?")) skip_until("?>");
      else if (at("<!--")) skip_until("-->");
      else if (at("<!DOCTYPE")) skip_doctype();
      else return;
    }
  }

  static bool name_char(char c) {
    auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || c == '_' || c == '-' || c == '.' || c == ':' || u >= 0x80;
  }

  std::string parse_name() {
    auto start = pos_;
    while (!eof() && name_char(peek())) ++pos_;
    if (start == pos_) fail("expected name");
    return std::string(src_.substr(start, pos_ - start));
  }

  void append_reference(std::string& out) {
    auto start = pos_;
    ++pos_;  // '&'
    auto semi = src_.find(';', pos_);
    if (semi == std::string_view::npos || semi - pos_ > 12) {
      pos_ = start;
      fail("malformed character reference");
    }
    auto ref = src_.substr(pos_, semi - pos_);
    pos_ = semi + 1;
    if (ref == "lt") out += '<';
    else if (ref == "gt") out += '>';
    else if (ref == "amp") out += '&';
    else if (ref == "quot") out += '"';
    else if (ref == "apos") out += '\'';
    else if (!ref.empty() && ref[0] == '#') {
      std::uint32_t cp = 0;
      bool ok = ref.size() > 1 && (ref[1] == 'x' ? parse_hex(ref.substr(2), cp) : parse_int(ref.substr(1), cp));
      if (!ok || cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
        pos_ = start;
        fail("invalid numeric character reference");
      }
      utf8::append(out, static_cast<char32_t>(cp));
    } else {
      pos_ = start;
      fail("unknown entity '&" + std::string(ref) + ";'");
    }
  }

  static bool parse_hex(std::string_view s, std::uint32_t& out) {
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out, 16);
    return ec == std::errc{} && p == s.data() + s.size();
  }

  std::string parse_attr_value() {
    if (eof() || (peek() != '"' && peek() != '\'')) fail("expected quoted attribute value");
    char quote = src_[pos_++];
    std::string out;
    while (!eof() && peek() != quote) {
      if (peek() == '<') fail("'<' in attribute value");
      if (peek() == '&') append_reference(out);
      else out += src_[pos_++];
    }
    if (eof()) fail("unterminated attribute value");
    ++pos_;
    return out;
  }

  std::unique_ptr<element> parse_element() {
    expect("<");
    auto el = std::make_unique<element>();
    el->name = parse_name();
    for (;;) {
      skip_ws();
      if (eof()) fail("unterminated start tag");
      if (at("/>")) {
        pos_ += 2;
        return el;
      }
      if (peek() == '>') {
        ++pos_;
        break;
      }
      auto key = parse_name();
      skip_ws();
      expect("=");
      skip_ws();
      el->attributes.emplace_back(std::move(key), parse_attr_value());
    }
    parse_content(*el);
    return el;
  }

  void parse_content(element& el) {
    std::string text;
    auto flush = [&] {
      if (!text.empty()) el.children.emplace_back(std::move(text));
      text.clear();
    };
    for (;;) {
      if (eof()) fail("unclosed element <" + el.name + ">");
      if (at("</")) {
        flush();
        auto tag_pos = pos_;
        pos_ += 2;
        auto name = parse_name();
        if (name != el.name) {
          pos_ = tag_pos;
          fail("mismatched closing tag </" + name + "> for <" + el.name + ">");
        }
        skip_ws();
        expect(">");
        return;
      }
      if (at("<!--")) {
        skip_until("-->");
      } else if (at("<![CDATA[")) {
        pos_ += 9;
        auto end = src_.find("]]>", pos_);
        if (end == std::string_view::npos) fail("unterminated CDATA section");
        text.append(src_.substr(pos_, end - pos_));
        pos_ = end + 3;
      } else if (at("<?")) {
        skip_until("?>");
      } else if (peek() == '<') {
        flush();
        el.children.emplace_back(parse_element());
      } else if (peek() == '&') {
        append_reference(text);
      } else {
        text += src_[pos_++];
      }
    }
  }
};

}  // namespace detail

inline std::unique_ptr<element> parse(std::string_view src) { return detail::reader(src).document(); }

}  // namespace khub::xml
