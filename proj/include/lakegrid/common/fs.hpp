#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace lakegrid {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view data);

// Writes to a sibling temporary name and renames over the target, so readers
// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

// Like write_file_atomic but leaves an existing file untouched.
// Returns false when the target already existed.
bool write_file_once(const std::filesystem::path& path, std::string_view data);

/// Exclusive advisory lock on a file (flock). Serializes across threads and
/// processes alike, since each instance opens its own descriptor.
class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& path);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace lakegrid
