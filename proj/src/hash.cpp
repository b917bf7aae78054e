#include "pcb_sentinel/hash.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <vector>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel {

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

namespace {

void feed_file(Fnv1a& h, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot read " + path.string());
  std::vector<std::uint8_t> buf(1 << 16);
  while (in) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    h.update(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
}

}  // namespace

std::string hash_file(const std::filesystem::path& path) {
  Fnv1a h;
  feed_file(h, path);
  return h.hex();
}

std::string hash_directory(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Fnv1a h;
  for (const auto& f : files) {
    h.update(std::filesystem::relative(f, dir).generic_string());
    feed_file(h, f);
  }
  return h.hex();
}

}  // namespace pcb_sentinel
