// SPDX-License-Identifier: Apache-2.0
#include "moediff/text.hpp"

#include <regex>

namespace moediff {

namespace {

const std::regex kHtmlTag("<[^<>]*>");
const std::regex kUrl(R"([A-Za-z][A-Za-z0-9+.\-]*://[^\s]+|www\.[^\s]+)");
const std::regex kEmail(R"([A-Za-z0-9._%+\-]+@[A-Za-z0-9.\-]+\.[A-Za-z]{2,})");
const std::regex kWhitespace(R"(\s+)");

}  // namespace

std::string clean_text(const std::string& raw) {
  std::string s = raw;
  for (;;) {
    std::string next = std::regex_replace(s, kHtmlTag, " ");
    next = std::regex_replace(next, kUrl, " ");
    next = std::regex_replace(next, kEmail, " ");
    if (next == s) break;
    s = std::move(next);
  }
  s = std::regex_replace(s, kWhitespace, " ");
  if (!s.empty() && s.front() == ' ') s.erase(s.begin());
  if (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace moediff
