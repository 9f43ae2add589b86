#pragma once

#include "metanet/corpus.hpp"
#include "metanet/embed.hpp"
#include "metanet/eval.hpp"
#include "metanet/experiment.hpp"
#include "metanet/features.hpp"
#include "metanet/net.hpp"
#include "metanet/serve.hpp"
#include "metanet/store.hpp"
