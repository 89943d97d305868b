#include "rectflow/pairset.hpp"

#include <cstring>

#include "rectflow/io_util.hpp"

namespace rectflow {

namespace {
constexpr char kMagic[8] = {'R', 'F', 'P', 'A', 'I', 'R', 'S', '1'};
}

std::vector<int> PairSet::tokens_at(std::size_t i) const {
  if (cond_layout != CondLayout::tokens) {
    throw ContractError("pair set does not carry token conditions");
  }
  std::vector<int> toks(cond_len);
  for (std::size_t j = 0; j < cond_len; ++j) {
    toks[j] = static_cast<int>(cond[i * cond_len + j]);
  }
  return toks;
}

void PairSet::save(const std::string& path) const {
  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 8);
  io::put<std::uint32_t>(buf, 1);  // version
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(dim));
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(cond_layout));
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(cond_len));
  io::put<std::uint64_t>(buf, fingerprint);
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(solver.kind));
  io::put<double>(buf, solver.rtol);
  io::put<double>(buf, solver.atol);
  io::put<std::uint64_t>(buf, solver.euler_steps);
  io::put<std::uint64_t>(buf, solver.max_nfe);
  io::put<std::uint64_t>(buf, count);
  io::put<std::uint64_t>(buf, attempted);
  io::put<std::uint64_t>(buf, skipped);
  for (std::size_t i = 0; i < count; ++i) {
    io::put_doubles(buf, {x1.begin() + i * dim, x1.begin() + (i + 1) * dim});
    io::put_doubles(
        buf, {x0_hat.begin() + i * dim, x0_hat.begin() + (i + 1) * dim});
    if (cond_len > 0) {
      io::put_doubles(buf, {cond.begin() + i * cond_len,
                            cond.begin() + (i + 1) * cond_len});
    }
  }
  io::write_file_atomic(path, buf);
}

PairSet PairSet::load(const std::string& path) {
  const auto buf = io::read_file(path);
  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 8) != 0) {
    throw IoError("'" + path + "' is not a pair-set file");
  }
  std::size_t pos = 8;
  const auto version = io::get<std::uint32_t>(buf, pos);
  if (version != 1) {
    throw IoError("pair set '" + path + "' has unsupported version " +
                  std::to_string(version));
  }
  PairSet ps;
  ps.dim = io::get<std::uint32_t>(buf, pos);
  ps.cond_layout = static_cast<CondLayout>(io::get<std::uint32_t>(buf, pos));
  ps.cond_len = io::get<std::uint32_t>(buf, pos);
  ps.fingerprint = io::get<std::uint64_t>(buf, pos);
  ps.solver.kind = static_cast<SolverKind>(io::get<std::uint32_t>(buf, pos));
  ps.solver.rtol = io::get<double>(buf, pos);
  ps.solver.atol = io::get<double>(buf, pos);
  ps.solver.euler_steps =
      static_cast<std::size_t>(io::get<std::uint64_t>(buf, pos));
  ps.solver.max_nfe =
      static_cast<std::size_t>(io::get<std::uint64_t>(buf, pos));
  ps.count = static_cast<std::size_t>(io::get<std::uint64_t>(buf, pos));
  ps.attempted = static_cast<std::size_t>(io::get<std::uint64_t>(buf, pos));
  ps.skipped = static_cast<std::size_t>(io::get<std::uint64_t>(buf, pos));
  ps.x1.reserve(ps.count * ps.dim);
  ps.x0_hat.reserve(ps.count * ps.dim);
  ps.cond.reserve(ps.count * ps.cond_len);
  for (std::size_t i = 0; i < ps.count; ++i) {
    auto a = io::get_doubles(buf, pos, ps.dim);
    ps.x1.insert(ps.x1.end(), a.begin(), a.end());
    auto b = io::get_doubles(buf, pos, ps.dim);
    ps.x0_hat.insert(ps.x0_hat.end(), b.begin(), b.end());
    if (ps.cond_len > 0) {
      auto c = io::get_doubles(buf, pos, ps.cond_len);
      ps.cond.insert(ps.cond.end(), c.begin(), c.end());
    }
  }
  return ps;
}

PairSet PairSet::load_for(const std::string& path,
                          std::uint64_t expected_fingerprint) {
  PairSet ps = load(path);
  if (ps.fingerprint != expected_fingerprint) {
    throw MissingArtifactError(
        "pair set '" + path +
        "' was generated by a different model (fingerprint mismatch)");
  }
  return ps;
}

}  // namespace rectflow
