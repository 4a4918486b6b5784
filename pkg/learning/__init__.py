# Graph construction, the EdgeConv surrogate and its training loop.
