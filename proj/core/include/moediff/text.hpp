// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace moediff {

/// Strips HTML tags, URLs (scheme:// and www. forms), and email addresses,
/// then collapses whitespace runs to single spaces and trims the ends. Case
/// is preserved. Removal iterates to a fixed point so that fragments joined
/// by a deletion (e.g. "<<b>>") cannot survive one call, which makes the
/// function idempotent.
std::string clean_text(const std::string& raw);

}  // namespace moediff
