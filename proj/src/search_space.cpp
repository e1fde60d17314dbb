#include "fsnas/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsnas/error.hpp"
#include "fsnas/hash.hpp"

namespace fsnas::space {

BigUint::BigUint(std::uint64_t v) {
  do {
    limbs_.push_back(static_cast<std::uint32_t>(v % 1000000000ull));
    v /= 1000000000ull;
  } while (v > 0);
}

void BigUint::trim() {
  while (limbs_.size() > 1 && limbs_.back() == 0) limbs_.pop_back();
}

BigUint& BigUint::operator+=(const BigUint& o) {
  const std::size_t n = std::max(limbs_.size(), o.limbs_.size());
  limbs_.resize(n, 0);
  std::uint64_t carry = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t s = carry + limbs_[i] +
                      (i < o.limbs_.size() ? o.limbs_[i] : 0u);
    limbs_[i] = static_cast<std::uint32_t>(s % 1000000000ull);
    carry = s / 1000000000ull;
  }
  if (carry) limbs_.push_back(static_cast<std::uint32_t>(carry));
  return *this;
}

BigUint& BigUint::mul_small(std::uint32_t m) {
  std::uint64_t carry = 0;
  for (auto& l : limbs_) {
    std::uint64_t p = static_cast<std::uint64_t>(l) * m + carry;
    l = static_cast<std::uint32_t>(p % 1000000000ull);
    carry = p / 1000000000ull;
  }
  while (carry) {
    limbs_.push_back(static_cast<std::uint32_t>(carry % 1000000000ull));
    carry /= 1000000000ull;
  }
  trim();
  return *this;
}

BigUint BigUint::operator*(const BigUint& o) const {
  BigUint out(0);
  out.limbs_.assign(limbs_.size() + o.limbs_.size(), 0);
  for (std::size_t i = 0; i < limbs_.size(); ++i) {
    std::uint64_t carry = 0;
    for (std::size_t j = 0; j < o.limbs_.size(); ++j) {
      std::uint64_t cur = out.limbs_[i + j] +
                          static_cast<std::uint64_t>(limbs_[i]) * o.limbs_[j] +
                          carry;
      out.limbs_[i + j] = static_cast<std::uint32_t>(cur % 1000000000ull);
      carry = cur / 1000000000ull;
    }
    std::size_t k = i + o.limbs_.size();
    while (carry) {
      std::uint64_t cur = out.limbs_[k] + carry;
      out.limbs_[k] = static_cast<std::uint32_t>(cur % 1000000000ull);
      carry = cur / 1000000000ull;
      ++k;
    }
  }
  out.trim();
  return out;
}

std::string BigUint::str() const {
  std::string s = std::to_string(limbs_.back());
  for (auto it = limbs_.rbegin() + 1; it != limbs_.rend(); ++it) {
    std::string part = std::to_string(*it);
    s += std::string(9 - part.size(), '0') + part;
  }
  return s;
}

void SearchSpace::validate() const {
  check(!stages.empty(), ErrorCode::Config, "search space needs >= 1 stage");
  check(stem_channels >= 1, ErrorCode::Config, "stem_channels must be >= 1");
  check(stem_stride >= 1, ErrorCode::Config, "stem_stride must be >= 1");
  check(num_classes >= 2, ErrorCode::Config, "num_classes must be >= 2");
  check(input_resolution >= 1, ErrorCode::Config, "input_resolution must be >= 1");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    const std::string where = "stage " + std::to_string(s + 1) + ": ";
    check(!st.depth_choices.empty(), ErrorCode::Config, where + "empty depth_choices");
    check(std::is_sorted(st.depth_choices.begin(), st.depth_choices.end()),
          ErrorCode::Config, where + "depth_choices must be sorted");
    check(st.depth_choices.front() >= 1, ErrorCode::Config,
          where + "depths must be >= 1");
    check(!st.ratios.empty(), ErrorCode::Config, where + "empty ratios");
    for (double r : st.ratios)
      check(r > 0.0 && r <= 1.0, ErrorCode::Config,
            where + "ratios must lie in (0, 1]");
    check(st.channel_multiple >= 1, ErrorCode::Config,
          where + "channel_multiple must be >= 1");
    check(st.base_channels >= 1 && st.base_channels % st.channel_multiple == 0,
          ErrorCode::Config,
          where + "base_channels must be a positive multiple of channel_multiple");
    check(st.stride >= 1, ErrorCode::Config, where + "stride must be >= 1");
    const auto cands = candidate_channels(st);
    check(!cands.empty(), ErrorCode::Config, where + "no channel candidates");
  }
}

int round_channels(int base, double ratio, int multiple) {
  check(multiple >= 1, ErrorCode::Usage, "channel multiple must be >= 1");
  const double target = static_cast<double>(base) * ratio;
  // floor(x + 0.5) rounds halves up
  const auto k = static_cast<long long>(std::floor(target / multiple + 0.5));
  return static_cast<int>(std::max<long long>(1, k)) * multiple;
}

std::vector<int> candidate_channels(const StageSpec& stage) {
  std::vector<int> out;
  out.reserve(stage.ratios.size());
  for (double r : stage.ratios)
    out.push_back(round_channels(stage.base_channels, r, stage.channel_multiple));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

BigUint space_size(const SearchSpace& space) {
  BigUint total(1);
  for (const auto& st : space.stages) {
    const auto n_mid = static_cast<std::uint32_t>(candidate_channels(st).size());
    BigUint stage_sum(0);
    for (int d : st.depth_choices) {
      BigUint p(1);
      for (int i = 0; i < d; ++i) p.mul_small(n_mid);
      stage_sum += p;
    }
    stage_sum.mul_small(n_mid);  // choices for the stage's out width
    total = total * stage_sum;
  }
  return total;
}

void validate_arch(const SearchSpace& space, const Architecture& arch) {
  check(arch.stages.size() == space.stages.size(), ErrorCode::Config,
        "architecture has " + std::to_string(arch.stages.size()) +
            " stages, space expects " + std::to_string(space.stages.size()));
  for (std::size_t s = 0; s < space.stages.size(); ++s) {
    const auto& spec = space.stages[s];
    const auto& ch = arch.stages[s];
    const auto cands = candidate_channels(spec);
    const std::string where = "stage " + std::to_string(s + 1) + ": ";
    check(std::find(spec.depth_choices.begin(), spec.depth_choices.end(),
                    ch.depth) != spec.depth_choices.end(),
          ErrorCode::Config, where + "depth " + std::to_string(ch.depth) +
                                 " not a depth choice");
    check(ch.out_idx >= 0 && ch.out_idx < static_cast<int>(cands.size()),
          ErrorCode::Config, where + "out index out of range");
    check(static_cast<int>(ch.mid_idx.size()) == ch.depth, ErrorCode::Config,
          where + "mid_idx length must equal depth");
    for (int m : ch.mid_idx)
      check(m >= 0 && m < static_cast<int>(cands.size()), ErrorCode::Config,
            where + "mid index out of range");
  }
}

Architecture largest_arch(const SearchSpace& space) {
  Architecture a;
  for (const auto& st : space.stages) {
    StageChoice c;
    c.depth = st.depth_choices.back();
    c.out_idx = static_cast<int>(candidate_channels(st).size()) - 1;
    c.mid_idx.assign(static_cast<std::size_t>(c.depth), c.out_idx);
    a.stages.push_back(std::move(c));
  }
  return a;
}

Architecture smallest_arch(const SearchSpace& space) {
  Architecture a;
  for (const auto& st : space.stages) {
    StageChoice c;
    c.depth = st.depth_choices.front();
    c.out_idx = 0;
    c.mid_idx.assign(static_cast<std::size_t>(c.depth), 0);
    a.stages.push_back(std::move(c));
  }
  return a;
}

std::string encode(const SearchSpace& space, const Architecture& arch) {
  validate_arch(space, arch);
  std::string out;
  for (std::size_t s = 0; s < arch.stages.size(); ++s) {
    const auto cands = candidate_channels(space.stages[s]);
    const auto& ch = arch.stages[s];
    if (s) out += ';';
    out += "d" + std::to_string(ch.depth);
    out += ":o" + std::to_string(cands[static_cast<std::size_t>(ch.out_idx)]);
    out += ":m";
    for (std::size_t i = 0; i < ch.mid_idx.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(cands[static_cast<std::size_t>(ch.mid_idx[i])]);
    }
  }
  return out;
}

namespace {

std::vector<std::string> split_str(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

int parse_int_field(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    check(used == text.size(), ErrorCode::Parse, where + ": trailing characters in '" + text + "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    raise(ErrorCode::Parse, where + ": expected integer, got '" + text + "'");
  }
}

int channel_to_index(const std::vector<int>& cands, int value,
                     const std::string& where) {
  const auto it = std::find(cands.begin(), cands.end(), value);
  check(it != cands.end(), ErrorCode::Parse,
        where + ": channel " + std::to_string(value) + " is not a candidate");
  return static_cast<int>(it - cands.begin());
}

}  // namespace

Architecture decode(const SearchSpace& space, const std::string& text) {
  const auto stage_parts = split_str(text, ';');
  check(stage_parts.size() == space.stages.size(), ErrorCode::Parse,
        "encoded architecture has " + std::to_string(stage_parts.size()) +
            " stages, space expects " + std::to_string(space.stages.size()));
  Architecture a;
  for (std::size_t s = 0; s < stage_parts.size(); ++s) {
    const std::string where = "stage " + std::to_string(s + 1);
    const auto fields = split_str(stage_parts[s], ':');
    check(fields.size() == 3 && fields[0].size() > 1 && fields[0][0] == 'd' &&
              fields[1].size() > 1 && fields[1][0] == 'o' &&
              fields[2].size() > 1 && fields[2][0] == 'm',
          ErrorCode::Parse, where + ": expected d{depth}:o{out}:m{mids}");
    const auto& spec = space.stages[s];
    const auto cands = candidate_channels(spec);
    StageChoice c;
    c.depth = parse_int_field(fields[0].substr(1), where + " depth");
    check(std::find(spec.depth_choices.begin(), spec.depth_choices.end(),
                    c.depth) != spec.depth_choices.end(),
          ErrorCode::Parse, where + ": depth " + std::to_string(c.depth) +
                                " not in depth choices");
    c.out_idx = channel_to_index(
        cands, parse_int_field(fields[1].substr(1), where + " out"), where + " out");
    const auto mids = split_str(fields[2].substr(1), ',');
    check(static_cast<int>(mids.size()) == c.depth, ErrorCode::Parse,
          where + ": expected " + std::to_string(c.depth) + " mid channels, got " +
              std::to_string(mids.size()));
    for (const auto& m : mids)
      c.mid_idx.push_back(channel_to_index(
          cands, parse_int_field(m, where + " mid"), where + " mid"));
    a.stages.push_back(std::move(c));
  }
  validate_arch(space, a);
  return a;
}

std::uint64_t arch_hash(const SearchSpace& space, const Architecture& arch) {
  return fnv1a64(encode(space, arch));
}

Architecture sample_uniform(const SearchSpace& space, Rng& rng) {
  Architecture a;
  for (const auto& st : space.stages) {
    const auto cands = candidate_channels(st);
    StageChoice c;
    c.depth = st.depth_choices[rng.randint(st.depth_choices.size())];
    c.out_idx = static_cast<int>(rng.randint(cands.size()));
    for (int b = 0; b < c.depth; ++b)
      c.mid_idx.push_back(static_cast<int>(rng.randint(cands.size())));
    a.stages.push_back(std::move(c));
  }
  return a;
}

std::uint64_t fair_round_length(const std::vector<std::uint64_t>& cardinalities,
                                std::uint64_t cap) {
  std::uint64_t l = 1;
  for (std::uint64_t c : cardinalities) {
    if (c == 0) continue;
    l = std::lcm(l, c);
    if (l >= cap) return cap;
  }
  return l;
}

FairSamplerState::FairSamplerState(const SearchSpace& space) {
  for (const auto& st : space.stages) {
    StageDims sd;
    sd.depth.perm.resize(st.depth_choices.size());
    std::iota(sd.depth.perm.begin(), sd.depth.perm.end(), 0);
    const auto n = candidate_channels(st).size();
    sd.out.perm.resize(n);
    std::iota(sd.out.perm.begin(), sd.out.perm.end(), 0);
    sd.mids.resize(static_cast<std::size_t>(st.depth_choices.back()));
    for (auto& m : sd.mids) {
      m.perm.resize(n);
      std::iota(m.perm.begin(), m.perm.end(), 0);
    }
    dims_.push_back(std::move(sd));
  }
}

int FairSamplerState::draw(Dim& d, Rng& rng) {
  if (!d.shuffled || d.cursor == d.perm.size()) {
    rng.shuffle(d.perm);
    d.cursor = 0;
    d.shuffled = true;
  }
  return d.perm[d.cursor++];
}

Architecture FairSamplerState::sample_one(const SearchSpace& space, Rng& rng) {
  Architecture a;
  for (std::size_t s = 0; s < space.stages.size(); ++s) {
    const auto& spec = space.stages[s];
    auto& sd = dims_[s];
    StageChoice c;
    c.depth = spec.depth_choices[static_cast<std::size_t>(draw(sd.depth, rng))];
    c.out_idx = draw(sd.out, rng);
    for (int b = 0; b < c.depth; ++b)
      c.mid_idx.push_back(draw(sd.mids[static_cast<std::size_t>(b)], rng));
    a.stages.push_back(std::move(c));
  }
  return a;
}

std::uint64_t FairSamplerState::round_length(int cap) const {
  std::vector<std::uint64_t> cards;
  for (const auto& sd : dims_) {
    cards.push_back(sd.depth.perm.size());
    cards.push_back(sd.out.perm.size());
    for (const auto& m : sd.mids) cards.push_back(m.perm.size());
  }
  return fair_round_length(cards, static_cast<std::uint64_t>(cap));
}

std::vector<Architecture> FairSamplerState::sample_round(
    const SearchSpace& space, Rng& rng, int cap) {
  const std::uint64_t len = round_length(cap);
  std::vector<Architecture> out;
  out.reserve(static_cast<std::size_t>(len));
  for (std::uint64_t i = 0; i < len; ++i) out.push_back(sample_one(space, rng));
  return out;
}

}  // namespace fsnas::space
