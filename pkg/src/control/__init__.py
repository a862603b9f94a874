# Planning and control: CEM, MPVIC, curiosity exploration
