# Face fitting package initialization
