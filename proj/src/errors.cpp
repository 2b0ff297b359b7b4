#include "catreg/errors.hpp"

namespace catreg {

void contract_fail(const std::string& what) { throw ContractError(what); }

}  // namespace catreg
