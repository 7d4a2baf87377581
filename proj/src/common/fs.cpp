#include "lakegrid/common/fs.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lakegrid/common/error.hpp"

namespace lakegrid {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::NotFound, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Internal, "cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorKind::Internal, "short write to " + path.string());
}

namespace {
fs::path temp_sibling(const fs::path& path) {
  static std::atomic<unsigned> counter{0};
  auto name = path.filename().string() + ".tmp." + std::to_string(::getpid()) + "." +
              std::to_string(counter.fetch_add(1));
  return path.parent_path() / name;
}
}  // namespace

void write_file_atomic(const fs::path& path, std::string_view data) {
  auto tmp = temp_sibling(path);
  write_file(tmp, data);
  fs::rename(tmp, path);
}

bool write_file_once(const fs::path& path, std::string_view data) {
  auto tmp = temp_sibling(path);
  write_file(tmp, data);
  // link() fails with EEXIST instead of replacing, which gives first-wins.
  int rc = ::link(tmp.c_str(), path.c_str());
  int err = errno;
  fs::remove(tmp);
  if (rc == 0) return true;
  if (err == EEXIST) return false;
  throw Error(ErrorKind::Internal, "cannot publish " + path.string() + ": " + std::strerror(err));
}

FileLock::FileLock(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(ErrorKind::Internal, "cannot open lock " + path.string());
  while (::flock(fd_, LOCK_EX) != 0) {
    if (errno != EINTR) {
      ::close(fd_);
      throw Error(ErrorKind::Internal, "flock failed on " + path.string());
    }
  }
}

FileLock::~FileLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace lakegrid
