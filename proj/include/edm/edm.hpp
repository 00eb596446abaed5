#ifndef EDM_EDM_HPP
#define EDM_EDM_HPP

#include "bench.hpp"
#include "ccm.hpp"
#include "core.hpp"
#include "distributed.hpp"
#include "io.hpp"
#include "knn.hpp"
#include "net.hpp"
#include "parallel.hpp"
#include "profile.hpp"
#include "protocol.hpp"
#include "scheduler.hpp"
#include "simplex.hpp"
#include "synth.hpp"

#endif // EDM_EDM_HPP
