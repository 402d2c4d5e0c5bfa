#ifndef PLANCRAFT_HASH_HPP_
#define PLANCRAFT_HASH_HPP_

#include <string>

namespace plancraft {

std::string sha256_hex(const std::string& bytes);

}  // namespace plancraft

#endif  // PLANCRAFT_HASH_HPP_
