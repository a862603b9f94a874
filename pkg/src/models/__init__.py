# Plant, task environments and dynamics models
